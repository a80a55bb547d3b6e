//! Sentence segmentation, tokenisation with character offsets, casing
//! classes and character ids.
//!
//! All offsets are counted in Unicode scalar values, not bytes.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub sentence_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CasingClass {
    AllUpper,
    AllLower,
    Numeric,
    MixedDigit,
    InitialUpper,
    Other,
}

impl CasingClass {
    pub const ALL: [CasingClass; 6] = [
        CasingClass::AllUpper,
        CasingClass::AllLower,
        CasingClass::Numeric,
        CasingClass::MixedDigit,
        CasingClass::InitialUpper,
        CasingClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Words that end in `.` without ending a sentence.
#[derive(Clone, Debug)]
pub struct Abbreviations {
    words: HashSet<String>,
}

impl Abbreviations {
    /// Parses one abbreviation per line; blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Abbreviations { words }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn default_list() -> &'static Abbreviations {
        static DEFAULT: OnceLock<Abbreviations> = OnceLock::new();
        DEFAULT.get_or_init(|| Abbreviations::parse(DEFAULT_ABBREVIATIONS))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '"' | '\'')
}

/// Sentence character ranges using the default abbreviation list.
pub fn segment_sentences(text: &str) -> Vec<Range<usize>> {
    segment_sentences_with(text, Abbreviations::default_list())
}

/// Splits after `.`/`!`/`?` (plus closing brackets or quotes) when followed
/// by whitespace and an uppercase letter or digit, unless the word ending
/// in `.` is a listed abbreviation. Blank lines always separate sentences.
pub fn segment_sentences_with(text: &str, abbrevs: &Abbreviations) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_content = 0;
    let mut i = 0;

    let close = |out: &mut Vec<Range<usize>>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push(s..end);
        }
    };

    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            if c == '\n' {
                // blank line: newline, optional horizontal space, newline
                let mut j = i + 1;
                while j < n && chars[j].is_whitespace() && chars[j] != '\n' {
                    j += 1;
                }
                if j < n && chars[j] == '\n' {
                    close(&mut out, &mut start, last_content);
                }
            }
            i += 1;
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_content = i + 1;

        if is_terminator(c) {
            let mut j = i + 1;
            while j < n && (is_terminator(chars[j]) || is_closer(chars[j])) {
                j += 1;
            }
            let end = j;
            let mut k = j;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            let followed_by_space = k > j;
            let next_ok = k < n && (chars[k].is_uppercase() || chars[k].is_ascii_digit());
            let abbrev = c == '.' && end == i + 1 && {
                let mut w = i;
                while w > 0 && !chars[w - 1].is_whitespace() {
                    w -= 1;
                }
                let word: String = chars[w..=i].iter().collect();
                let word = word.trim_start_matches(|ch: char| !ch.is_alphanumeric());
                abbrevs.contains(word)
            };
            if followed_by_space && next_ok && !abbrev {
                close(&mut out, &mut start, end);
                i = j;
                last_content = end;
                continue;
            }
            last_content = end;
            i = j;
            continue;
        }
        i += 1;
    }
    close(&mut out, &mut start, last_content);
    out
}

/// Tokenises one sentence using the default abbreviation list.
pub fn tokenize(sentence_text: &str, base_offset: usize) -> Vec<Token> {
    tokenize_with(sentence_text, base_offset, Abbreviations::default_list())
}

/// Whitespace split, then leading and trailing punctuation peeled off as
/// single-character tokens ("40mg," -> "40mg", ","). Internal punctuation
/// ("3.2mg", "04/12/2019") is kept, as are listed abbreviations ("p.o.").
pub fn tokenize_with(sentence_text: &str, base_offset: usize, abbrevs: &Abbreviations) -> Vec<Token> {
    let chars: Vec<char> = sentence_text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let s = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars[s..i], base_offset + s, abbrevs, &mut tokens);
    }
    tokens
}

fn split_chunk(chunk: &[char], offset: usize, abbrevs: &Abbreviations, out: &mut Vec<Token>) {
    let push = |out: &mut Vec<Token>, a: usize, b: usize| {
        out.push(Token {
            text: chunk[a..b].iter().collect(),
            start: offset + a,
            end: offset + b,
            sentence_index: 0,
        });
    };
    let word: String = chunk.iter().collect();
    if abbrevs.contains(&word) {
        push(out, 0, chunk.len());
        return;
    }
    let is_punct = |c: char| !c.is_alphanumeric();
    let mut lo = 0;
    while lo < chunk.len() && is_punct(chunk[lo]) {
        push(out, lo, lo + 1);
        lo += 1;
    }
    if lo == chunk.len() {
        return;
    }
    let mut hi = chunk.len();
    while hi > lo && is_punct(chunk[hi - 1]) {
        hi -= 1;
    }
    // An abbreviation may still hide behind leading punctuation: "(p.o.)".
    for end in (hi + 1..=chunk.len()).rev() {
        let candidate: String = chunk[lo..end].iter().collect();
        if abbrevs.contains(&candidate) {
            hi = end;
            break;
        }
    }
    push(out, lo, hi);
    for k in hi..chunk.len() {
        push(out, k, k + 1);
    }
}

/// Sentence ranges and document-level tokens with sentence indices filled.
pub fn tokenize_document(text: &str) -> (Vec<Range<usize>>, Vec<Token>) {
    tokenize_document_with(text, Abbreviations::default_list())
}

pub fn tokenize_document_with(text: &str, abbrevs: &Abbreviations) -> (Vec<Range<usize>>, Vec<Token>) {
    let chars: Vec<char> = text.chars().collect();
    let sentences = segment_sentences_with(text, abbrevs);
    let mut tokens = Vec::new();
    for (si, r) in sentences.iter().enumerate() {
        let sentence: String = chars[r.clone()].iter().collect();
        for mut t in tokenize_with(&sentence, r.start, abbrevs) {
            t.sentence_index = si;
            tokens.push(t);
        }
    }
    (sentences, tokens)
}

/// Substring by character offsets.
pub fn char_slice(text: &str, range: Range<usize>) -> String {
    text.chars().skip(range.start).take(range.end - range.start).collect()
}

pub fn casing_class(token: &str) -> Result<CasingClass> {
    if token.is_empty() {
        return Err(Error::Invalid("casing_class of empty token".into()));
    }
    let chars: Vec<char> = token.chars().collect();
    let all_letters = chars.iter().all(|c| c.is_alphabetic());
    if all_letters && chars.iter().all(|c| !c.is_lowercase()) && chars.iter().any(|c| c.is_uppercase()) {
        return Ok(CasingClass::AllUpper);
    }
    if all_letters && chars.iter().all(|c| !c.is_uppercase()) && chars.iter().any(|c| c.is_lowercase()) {
        return Ok(CasingClass::AllLower);
    }
    if is_numeric(&chars) {
        return Ok(CasingClass::Numeric);
    }
    let has_digit = chars.iter().any(|c| c.is_ascii_digit());
    if has_digit && chars.iter().any(|c| !c.is_ascii_digit()) {
        return Ok(CasingClass::MixedDigit);
    }
    if chars[0].is_uppercase() && chars.len() > 1 && chars[1..].iter().all(|c| c.is_lowercase()) {
        return Ok(CasingClass::InitialUpper);
    }
    Ok(CasingClass::Other)
}

/// Digits, optionally separated by single `.`, `,` or `-` between digits.
fn is_numeric(chars: &[char]) -> bool {
    if !chars.first().is_some_and(|c| c.is_ascii_digit()) || !chars.last().is_some_and(|c| c.is_ascii_digit()) {
        return false;
    }
    chars.windows(2).all(|w| {
        let sep = |c: char| matches!(c, '.' | ',' | '-');
        (w[0].is_ascii_digit() || sep(w[0])) && (w[1].is_ascii_digit() || sep(w[1])) && !(sep(w[0]) && sep(w[1]))
    })
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

/// Character inventory with PAD = 0 and UNK = 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    ids: BTreeMap<char, usize>,
}

impl CharVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = CharVocab::new();
        for w in words {
            for c in w.chars() {
                v.insert(c);
            }
        }
        v
    }

    pub fn insert(&mut self, c: char) -> usize {
        let next = self.ids.len() + 2;
        *self.ids.entry(c).or_insert(next)
    }

    pub fn get(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    /// Number of ids including PAD and UNK.
    pub fn size(&self) -> usize {
        self.ids.len() + 2
    }
}

/// First `max_len` character ids, right-padded with [`CHAR_PAD`].
pub fn char_ids(token: &str, vocab: &CharVocab, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = token.chars().take(max_len).map(|c| vocab.get(c)).collect();
    ids.resize(max_len, CHAR_PAD);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_sentences("He was readmitted. CT shows mass.");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], 0..18);
        assert!(segment_sentences("").is_empty());
        assert_eq!(segment_sentences("Take 40mg p.o. daily.").len(), 1);
        assert_eq!(segment_sentences("Seen by Dr. Smith today. Stable.").len(), 2);
        assert_eq!(segment_sentences("Admission Date: May 2019\n\nDischarge Date: June 2019").len(), 2);
        assert_eq!(segment_sentences("Dose was 3.2mg. 5 days later stable.").len(), 2);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(texts(&tokenize("CT shows mass.", 0)), ["CT", "shows", "mass", "."]);
        assert_eq!(texts(&tokenize("Methotrexate,", 0)), ["Methotrexate", ","]);
        assert_eq!(texts(&tokenize("(May 2019)", 0)), ["(", "May", "2019", ")"]);
        assert_eq!(
            texts(&tokenize("40mg, p.o. 04/12/2019.", 0)),
            ["40mg", ",", "p.o.", "04/12/2019", "."]
        );
        let t = tokenize("a bc", 10);
        assert_eq!((t[1].start, t[1].end), (12, 14));
    }

    #[test]
    fn unicode_offsets_are_scalar_values() {
        let text = "Café noted. Naïve B12 given.";
        let (_, tokens) = tokenize_document(text);
        for t in &tokens {
            assert_eq!(char_slice(text, t.start..t.end), t.text);
        }
        assert_eq!(tokens[1].start, 5);
    }

    #[test]
    fn casing_examples() {
        assert_eq!(casing_class("ASA").unwrap(), CasingClass::AllUpper);
        assert_eq!(casing_class("325").unwrap(), CasingClass::Numeric);
        assert_eq!(casing_class("3.2").unwrap(), CasingClass::Numeric);
        assert_eq!(casing_class("B12").unwrap(), CasingClass::MixedDigit);
        assert_eq!(casing_class("3.2mg").unwrap(), CasingClass::MixedDigit);
        assert_eq!(casing_class("Percocet").unwrap(), CasingClass::InitialUpper);
        assert_eq!(casing_class("daily").unwrap(), CasingClass::AllLower);
        assert_eq!(casing_class(",").unwrap(), CasingClass::Other);
        assert_eq!(casing_class("McDonald").unwrap(), CasingClass::Other);
        assert!(casing_class("").is_err());
    }

    #[test]
    fn char_id_examples() {
        let mut v = CharVocab::new();
        let a = v.insert('a');
        let b = v.insert('b');
        assert_eq!(char_ids("ab", &v, 4), vec![a, b, CHAR_PAD, CHAR_PAD]);
        assert_eq!(char_ids("abcde", &v, 3), vec![a, b, CHAR_UNK]);
        assert_eq!(char_ids("", &v, 2), vec![CHAR_PAD, CHAR_PAD]);
    }

    #[test]
    fn abbreviation_file_parsing() {
        let a = Abbreviations::parse("# header\nq.d.\n\n  Dr. \n");
        assert_eq!(a.len(), 2);
        assert!(a.contains("DR."));
        assert!(Abbreviations::default_list().len() >= 30);
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_non_whitespace(text in "[A-Za-z0-9.,;()!? \n-]{0,80}") {
            let (_, tokens) = tokenize_document(&text);
            let mut rebuilt = String::new();
            let mut prev_end = 0;
            for t in &tokens {
                prop_assert!(t.start < t.end);
                prop_assert!(t.start >= prev_end);
                prop_assert_eq!(char_slice(&text, t.start..t.end), t.text.clone());
                prev_end = t.end;
                rebuilt.push_str(&t.text);
            }
            let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(rebuilt, expected);
        }

        #[test]
        fn casing_is_total(s in "\\PC{1,12}") {
            prop_assert!(casing_class(&s).is_ok());
        }

        #[test]
        fn tokenize_idempotent_on_simple_tokens(s in "[A-Za-z0-9]{1,10}") {
            let t = tokenize(&s, 0);
            prop_assert_eq!(t.len(), 1);
            prop_assert_eq!(&t[0].text, &s);
        }
    }
}

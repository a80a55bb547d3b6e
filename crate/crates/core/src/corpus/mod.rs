//! Annotated corpora: i2b2-style parsers, the IOB codec, CoNLL files,
//! document splits and the synthetic fixture generator.

mod conll;
mod fixture;
mod i2b2;
mod xml;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warnings};
use crate::textproc::Token;

pub use conll::{read_conll, write_conll, write_conll_sentences, ConllDoc};
pub use fixture::{fig1_document, generate_fixture_corpus, write_fixture, FixtureDocument, FixtureSpec, FIG1_DOC_ID};
pub use i2b2::{load_directory, load_document, parse_2009_annotations, parse_2012_annotations, ParseOptions, Parsed};

pub const MEDICATION_TAGS: [&str; 6] = ["m", "do", "f", "mo", "du", "r"];
pub const EVENT_TAGS: [&str; 6] = ["CLINICAL_DEPT", "EVIDENTIAL", "OCCURRENCE", "PROBLEM", "TREATMENT", "TEST"];
pub const TIMEX_TYPES: [&str; 4] = ["DATE", "TIME", "DURATION", "FREQUENCY"];

/// A tagged run of tokens. `start` and `end` are token ordinals within the
/// owning document (or sequence), `end` inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub tag: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// The three temporal relations kept from the i2b2 taxonomy, in class-index
/// order (`AFTER` < `OVERLAP` < `BEFORE`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Relation {
    After,
    Overlap,
    Before,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::After, Relation::Overlap, Relation::Before];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Self::ALL.get(i).copied()
    }

    /// The same fact stated from the other endpoint.
    pub fn inverse(self) -> Relation {
        match self {
            Relation::After => Relation::Before,
            Relation::Before => Relation::After,
            Relation::Overlap => Relation::Overlap,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::After => "AFTER",
            Relation::Overlap => "OVERLAP",
            Relation::Before => "BEFORE",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AFTER" => Ok(Relation::After),
            "OVERLAP" => Ok(Relation::Overlap),
            "BEFORE" => Ok(Relation::Before),
            _ => Err(Error::Invalid(format!("unknown relation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TLink {
    pub source: String,
    pub target: String,
    pub relation: Relation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub sentences: Vec<Range<usize>>,
    pub tokens: Vec<Token>,
    /// Spans used for sequence labelling, sorted by start token.
    pub entities: Vec<EntitySpan>,
    pub tlinks: Vec<TLink>,
    pub events: BTreeMap<String, EntitySpan>,
    pub timexes: BTreeMap<String, EntitySpan>,
}

impl AnnotatedDocument {
    /// Tokenised document with no annotations.
    pub fn from_text(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let (sentences, tokens) = crate::textproc::tokenize_document(&text);
        AnnotatedDocument {
            doc_id: doc_id.into(),
            text,
            sentences,
            tokens,
            ..Default::default()
        }
    }

    /// Original text between the first and last token of `span`.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let a = self.tokens[start].start;
        let b = self.tokens[end].end;
        crate::textproc::char_slice(&self.text, a..b)
    }

    /// Token ordinal ranges of each sentence.
    pub fn sentence_token_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![0..0; self.sentences.len()];
        let mut seen = vec![false; self.sentences.len()];
        for (i, t) in self.tokens.iter().enumerate() {
            let r = &mut out[t.sentence_index];
            if !seen[t.sentence_index] {
                *r = i..i + 1;
                seen[t.sentence_index] = true;
            } else {
                r.end = i + 1;
            }
        }
        out
    }

    /// Token ordinals overlapping the character range `[start, end)`.
    pub fn tokens_in_chars(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let mut hit = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < end && start < t.end)
            .map(|(i, _)| i);
        let first = hit.next()?;
        let last = hit.next_back().unwrap_or(first);
        Some((first, last))
    }

    /// Event or timex span by annotation id.
    pub fn mention(&self, id: &str) -> Option<&EntitySpan> {
        self.events.get(id).or_else(|| self.timexes.get(id))
    }
}

/// IOB label inventory. Ids: `PAD` = 0, `O` = 1, then `B-t`, `I-t` for each
/// base tag in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "SchemeRepr", try_from = "SchemeRepr")]
pub struct TagScheme {
    name: String,
    base_tags: Vec<String>,
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    name: String,
    base_tags: Vec<String>,
}

impl From<TagScheme> for SchemeRepr {
    fn from(s: TagScheme) -> Self {
        SchemeRepr {
            name: s.name,
            base_tags: s.base_tags,
        }
    }
}

impl TryFrom<SchemeRepr> for TagScheme {
    type Error = Error;

    fn try_from(r: SchemeRepr) -> Result<Self> {
        TagScheme::from_tags(r.name, r.base_tags)
    }
}

impl TagScheme {
    pub const PAD: &'static str = "PAD";
    pub const OUTSIDE: &'static str = "O";
    pub const PAD_ID: usize = 0;
    pub const O_ID: usize = 1;

    pub fn new(name: impl Into<String>, base_tags: &[&str]) -> Result<Self> {
        let tags: Vec<String> = base_tags.iter().map(|s| s.to_string()).collect();
        Self::from_tags(name.into(), tags)
    }

    fn from_tags(name: String, base_tags: Vec<String>) -> Result<Self> {
        let mut labels = vec![Self::PAD.to_string(), Self::OUTSIDE.to_string()];
        for t in &base_tags {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad tag name {t:?}")));
            }
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        let mut scheme = TagScheme {
            name,
            base_tags,
            labels,
            ids: HashMap::new(),
        };
        scheme.rebuild_index()?;
        Ok(scheme)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.ids = self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        if self.ids.len() != self.labels.len() {
            return Err(Error::Invalid(format!("duplicate tags in scheme {}", self.name)));
        }
        Ok(())
    }

    /// Medication fields: name, dosage, frequency, mode, duration, reason.
    pub fn medication() -> Self {
        Self::new("medication", &MEDICATION_TAGS).expect("static scheme")
    }

    /// Clinical event types.
    pub fn events() -> Self {
        Self::new("events", &EVENT_TAGS).expect("static scheme")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "medication" => Ok(Self::medication()),
            "events" => Ok(Self::events()),
            _ => Err(Error::Invalid(format!("unknown tag scheme {name:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_tags(&self) -> &[String] {
        &self.base_tags
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.base_tags.iter().any(|t| t == tag)
    }

    pub fn id(&self, label: &str) -> Result<usize> {
        self.ids.get(label).copied().ok_or_else(|| self.unknown(label))
    }

    pub fn label(&self, id: usize) -> Result<&str> {
        self.labels
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::range("label id", id, self.labels.len()))
    }

    fn unknown(&self, tag: &str) -> Error {
        Error::Scheme {
            tag: tag.to_string(),
            scheme: self.name.clone(),
        }
    }

    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.id(l)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.label(i).map(str::to_string)).collect()
    }
}

/// Tokens and IOB labels of one sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl LabeledSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Projects `doc.entities` onto per-sentence IOB labels.
///
/// Overlapping spans are resolved longest first, then earliest start; the
/// loser is dropped (`overlapping_span`). A span crossing a sentence
/// boundary restarts with `B-` in the second sentence (`cross_sentence_span`).
pub fn spans_to_iob(doc: &AnnotatedDocument, scheme: &TagScheme) -> Result<(Vec<LabeledSentence>, Warnings)> {
    let mut warnings = Warnings::new();
    let n = doc.tokens.len();
    let mut order: Vec<&EntitySpan> = doc.entities.iter().collect();
    for s in &order {
        if !scheme.has_tag(&s.tag) {
            return Err(Error::Scheme {
                tag: s.tag.clone(),
                scheme: scheme.name().to_string(),
            });
        }
        if s.start > s.end || s.end >= n {
            return Err(Error::range(format!("span {:?}", s.surface), s.end, n));
        }
    }
    order.sort_by_key(|s| (std::cmp::Reverse(s.len()), s.start));

    let mut owner: Vec<Option<&EntitySpan>> = vec![None; n];
    for s in order {
        if owner[s.start..=s.end].iter().any(Option::is_some) {
            warnings.bump("overlapping_span");
            continue;
        }
        for o in &mut owner[s.start..=s.end] {
            *o = Some(s);
        }
    }

    let ranges = doc.sentence_token_ranges();
    let mut out = Vec::with_capacity(ranges.len());
    for r in ranges {
        let mut sent = LabeledSentence::default();
        for i in r.clone() {
            sent.tokens.push(doc.tokens[i].text.clone());
            let label = match owner[i] {
                None => TagScheme::OUTSIDE.to_string(),
                Some(s) if i == s.start => format!("B-{}", s.tag),
                Some(s) if i == r.start => {
                    warnings.bump("cross_sentence_span");
                    format!("B-{}", s.tag)
                }
                Some(s) => format!("I-{}", s.tag),
            };
            sent.labels.push(label);
        }
        out.push(sent);
    }
    Ok((out, warnings))
}

/// Decodes IOB labels into spans over positions of `tokens`.
///
/// An `I-x` that does not continue an open `x` chunk starts a new one (the
/// conlleval repair). Labels without a `B-`/`I-` prefix (`O`, `PAD`) close
/// any open chunk.
pub fn iob_to_spans(tokens: &[String], labels: &[String]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let close = |open: &mut Option<(String, usize)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((tag, start)) = open.take() {
            let surface = tokens.get(start..=end).map(|t| t.join(" ")).unwrap_or_default();
            spans.push(EntitySpan { tag, start, end, surface });
        }
    };
    for (i, label) in labels.iter().enumerate() {
        let (prefix, tag) = match label.split_once('-') {
            Some((p @ ("B" | "I"), t)) if !t.is_empty() => (p, t),
            _ => {
                if i > 0 {
                    close(&mut open, i - 1, &mut spans);
                }
                continue;
            }
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|(t, _)| t == tag);
        if !continues {
            if i > 0 {
                close(&mut open, i - 1, &mut spans);
            }
            open = Some((tag.to_string(), i));
        }
    }
    if !labels.is_empty() {
        close(&mut open, labels.len() - 1, &mut spans);
    }
    spans
}

/// Document-level split. Each non-zero ratio gets at least one document;
/// otherwise sizes are floored and the remainder goes to train.
pub fn split_corpus<T: Clone>(docs: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = docs.len();
    if n < 3 {
        return Err(Error::Invalid(format!("need at least 3 documents to split, got {n}")));
    }
    let size = |r: f64| {
        let k = (n as f64 * r).floor() as usize;
        if r > 0.0 {
            k.max(1)
        } else {
            k
        }
    };
    let n_val = size(va);
    let n_test = size(te);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ix: &[usize]| ix.iter().map(|&i| docs[i].clone()).collect::<Vec<T>>();
    let n_train = n - n_val - n_test;
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn doc_with(text: &str, spans: &[(&str, usize, usize)]) -> AnnotatedDocument {
        let mut doc = AnnotatedDocument::from_text("d", text);
        for &(tag, start, end) in spans {
            let surface = doc.span_text(start, end);
            doc.entities.push(EntitySpan {
                tag: tag.into(),
                start,
                end,
                surface,
            });
        }
        doc
    }

    #[test]
    fn scheme_label_bijection() {
        let s = TagScheme::medication();
        assert_eq!(s.len(), 2 * 6 + 2);
        for (i, l) in s.labels().iter().enumerate() {
            assert_eq!(s.id(l).unwrap(), i);
            assert_eq!(s.label(i).unwrap(), l);
        }
        assert_eq!(s.id("PAD").unwrap(), TagScheme::PAD_ID);
        assert!(matches!(s.id("B-zz"), Err(Error::Scheme { .. })));
        assert!(TagScheme::new("x", &["a", "a"]).is_err());
    }

    #[test]
    fn spans_to_iob_examples() {
        let d = doc_with("a b c d e", &[("m", 2, 3)]);
        let (s, w) = spans_to_iob(&d, &TagScheme::medication()).unwrap();
        assert_eq!(s[0].labels, strings(&["O", "O", "B-m", "I-m", "O"]));
        assert!(w.is_empty());

        let d = doc_with("a b c d", &[("m", 1, 1), ("m", 2, 3)]);
        let (s, _) = spans_to_iob(&d, &TagScheme::medication()).unwrap();
        assert_eq!(s[0].labels, strings(&["O", "B-m", "B-m", "I-m"]));

        let d = doc_with("a b", &[]);
        let (s, _) = spans_to_iob(&d, &TagScheme::medication()).unwrap();
        assert_eq!(s[0].labels, strings(&["O", "O"]));
    }

    #[test]
    fn overlap_longest_then_earliest() {
        let d = doc_with("a b c d e", &[("m", 1, 2), ("do", 2, 4), ("f", 0, 1)]);
        let (s, w) = spans_to_iob(&d, &TagScheme::medication()).unwrap();
        assert_eq!(s[0].labels, strings(&["B-f", "I-f", "B-do", "I-do", "I-do"]));
        assert_eq!(w.get("overlapping_span"), 1);
    }

    #[test]
    fn cross_sentence_span_restarts() {
        let d = doc_with("Take aspirin. Daily dose.", &[("m", 1, 3)]);
        let (s, w) = spans_to_iob(&d, &TagScheme::medication()).unwrap();
        assert_eq!(s[0].labels, strings(&["O", "B-m", "I-m"]));
        assert_eq!(s[1].labels, strings(&["B-m", "O", "O"]));
        assert_eq!(w.get("cross_sentence_span"), 1);
    }

    #[test]
    fn unknown_tag_is_scheme_error() {
        let d = doc_with("a b", &[("zz", 0, 0)]);
        assert!(matches!(spans_to_iob(&d, &TagScheme::medication()), Err(Error::Scheme { .. })));
    }

    #[test]
    fn iob_to_spans_examples() {
        let toks = strings(&["w0", "w1", "w2", "w3"]);
        let spans = iob_to_spans(&toks, &strings(&["B-m", "I-m", "O", "B-do"]));
        let got: Vec<_> = spans.iter().map(|s| (s.start, s.end, s.tag.as_str())).collect();
        assert_eq!(got, [(0, 1, "m"), (3, 3, "do")]);

        let spans = iob_to_spans(&toks[..2], &strings(&["I-m", "O"]));
        assert_eq!((spans[0].start, spans[0].end), (0, 0));

        let spans = iob_to_spans(&toks[..2], &strings(&["B-m", "I-do"]));
        let got: Vec<_> = spans.iter().map(|s| (s.start, s.end, s.tag.as_str())).collect();
        assert_eq!(got, [(0, 0, "m"), (1, 1, "do")]);
        assert_eq!(spans[0].surface, "w0");
    }

    #[test]
    fn split_examples() {
        let docs: Vec<usize> = (0..20).collect();
        let (a, b, c) = split_corpus(&docs, (0.7, 0.15, 0.15), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, docs);
        assert_eq!(split_corpus(&docs, (0.7, 0.15, 0.15), 3).unwrap(), (a, b, c));

        let (a, b, c) = split_corpus(&[1, 2, 3], (0.7, 0.15, 0.15), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (1, 1, 1));
        assert!(split_corpus(&[1, 2], (0.7, 0.15, 0.15), 0).is_err());
        assert!(split_corpus(&docs, (0.7, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn relation_inverse_and_order() {
        assert_eq!(Relation::Before.inverse(), Relation::After);
        assert_eq!(Relation::Overlap.inverse(), Relation::Overlap);
        assert!(Relation::After < Relation::Overlap && Relation::Overlap < Relation::Before);
        assert_eq!("before".parse::<Relation>().unwrap(), Relation::Before);
    }

    fn well_formed() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec((0usize..3, 0usize..3), 0..25).prop_map(|steps| {
            let tags = ["m", "do", "f"];
            let mut out: Vec<String> = Vec::new();
            for (kind, t) in steps {
                let prev_tag = out.last().and_then(|l| l.split_once('-')).map(|(_, t)| t.to_string());
                match (kind, prev_tag) {
                    (0, _) => out.push("O".into()),
                    (1, Some(p)) => out.push(format!("I-{p}")),
                    _ => out.push(format!("B-{}", tags[t])),
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn iob_round_trip(labels in well_formed()) {
            let text = vec!["w"; labels.len()].join(" ");
            let toks: Vec<String> = vec!["w".to_string(); labels.len()];
            let spans = iob_to_spans(&toks, &labels);
            let mut doc = AnnotatedDocument::from_text("d", text);
            doc.entities = spans;
            let (sents, w) = spans_to_iob(&doc, &TagScheme::new("t", &["m", "do", "f"]).unwrap()).unwrap();
            prop_assert!(w.is_empty());
            let back: Vec<String> = sents.into_iter().flat_map(|s| s.labels).collect();
            prop_assert_eq!(back, labels);
        }
    }
}

//! Two-column CoNLL files: `token<TAB>label`, blank line after each
//! sentence, and `-DOCSTART-<TAB>O` followed by a `# doc: <id>` comment at
//! the start of each document.

use super::LabeledSentence;
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";
const DOC_COMMENT: &str = "# doc: ";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConllDoc {
    pub doc_id: String,
    pub sentences: Vec<LabeledSentence>,
}

pub fn write_conll_sentences(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            out.push_str(t);
            out.push('\t');
            out.push_str(l);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_conll(docs: &[ConllDoc]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&format!("{DOCSTART}\tO\n{DOC_COMMENT}{}\n\n", d.doc_id));
        out.push_str(&write_conll_sentences(&d.sentences));
    }
    out
}

/// Sentences that appear before any `-DOCSTART-` line are collected into a
/// document with an empty id.
pub fn read_conll(text: &str) -> Result<Vec<ConllDoc>> {
    let mut docs: Vec<ConllDoc> = Vec::new();
    let mut current = LabeledSentence::default();
    let flush = |docs: &mut Vec<ConllDoc>, current: &mut LabeledSentence| {
        if !current.is_empty() {
            if docs.is_empty() {
                docs.push(ConllDoc::default());
            }
            docs.last_mut().expect("non-empty").sentences.push(std::mem::take(current));
        }
    };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => flush(&mut docs, &mut current),
            [DOCSTART, _] => {
                flush(&mut docs, &mut current);
                docs.push(ConllDoc::default());
            }
            _ if line.starts_with(DOC_COMMENT) => {
                if let Some(d) = docs.last_mut().filter(|d| d.sentences.is_empty()) {
                    d.doc_id = line[DOC_COMMENT.len()..].trim().to_string();
                }
            }
            [token, label] => {
                current.tokens.push(token.to_string());
                current.labels.push(label.to_string());
            }
            _ => {
                return Err(Error::parse(i + 1, format!("expected 2 columns, found {}", cols.len())));
            }
        }
    }
    flush(&mut docs, &mut current);
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(pairs: &[(&str, &str)]) -> LabeledSentence {
        LabeledSentence {
            tokens: pairs.iter().map(|p| p.0.to_string()).collect(),
            labels: pairs.iter().map(|p| p.1.to_string()).collect(),
        }
    }

    #[test]
    fn single_token() {
        assert_eq!(write_conll_sentences(&[sent(&[("CT", "O")])]), "CT\tO\n\n");
    }

    #[test]
    fn round_trip() {
        let docs = vec![
            ConllDoc {
                doc_id: "a".into(),
                sentences: vec![sent(&[("CT", "B-TEST"), ("shows", "B-EVIDENTIAL")]), sent(&[("#", "O")])],
            },
            ConllDoc {
                doc_id: "b".into(),
                sentences: vec![sent(&[("Levaquin", "B-TREATMENT")])],
            },
        ];
        assert_eq!(read_conll(&write_conll(&docs)).unwrap(), docs);
    }

    #[test]
    fn bad_columns() {
        let e = read_conll("x\tO\na b c\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }
}

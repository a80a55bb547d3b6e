//! Vocabularies and word representations: one-hot vectors, bag-of-words
//! counts, pretrained vector files and dense lookup tables.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word/id bijection with `PAD` = 0 and `UNK` = 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
    frozen: bool,
    /// Fold words to lower case before insertion and lookup.
    lowercase: bool,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(false)
    }
}

impl Vocab {
    pub fn new(lowercase: bool) -> Self {
        let words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab {
            words,
            ids,
            frozen: false,
            lowercase,
        }
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>, lowercase: bool) -> Self {
        let mut v = Vocab::new(lowercase);
        for w in words {
            v.insert(w).expect("vocab not frozen");
        }
        v.freeze();
        v
    }

    fn key(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    pub fn insert(&mut self, word: &str) -> Result<usize> {
        let key = self.key(word);
        if let Some(&id) = self.ids.get(&key) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Invalid(format!("vocabulary is frozen; cannot add {word:?}")));
        }
        let id = self.words.len();
        self.ids.insert(key.clone(), id);
        self.words.push(key);
        Ok(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Id of `word`, or [`UNK`].
    pub fn get(&self, word: &str) -> usize {
        self.ids.get(&self.key(word)).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(&self.key(word))
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.get(w)).collect()
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Restores the lookup index after deserialisation.
    pub fn reindex(&mut self) {
        self.ids = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }
}

/// Dense `|vocab| x dim` table whose row [`PAD`] is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }
}

/// Unit basis vector `e_id` of length `n`.
pub fn one_hot(id: usize, n: usize) -> Result<Vec<f64>> {
    if id >= n {
        return Err(Error::range("one_hot", id, n));
    }
    let mut v = vec![0.0; n];
    v[id] = 1.0;
    Ok(v)
}

/// Per-id token counts; out-of-vocabulary words count towards [`UNK`].
pub fn bow_vector(tokens: &[String], vocab: &Vocab) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    for t in tokens {
        v[vocab.get(t)] += 1.0;
    }
    v
}

/// Rows of `table` for `ids`, stacked.
pub fn lookup(table: &EmbeddingTable, ids: &[usize]) -> Result<Tensor> {
    let d = table.dim();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::range("embedding lookup", id, table.rows()));
        }
        data.extend_from_slice(table.matrix.row_slice(id));
    }
    Tensor::matrix(ids.len(), d, data)
}

/// Reads a `word v1 .. vd` text file (gzip accepted) into a lower-casing
/// vocabulary and a frozen table. A leading `count dim` header line is
/// skipped. Rows follow file order after the reserved ids; [`UNK`] is the
/// mean of the loaded vectors. Repeated words keep their first vector.
pub fn load_pretrained(path: &Path, expected_dim: usize) -> Result<(Vocab, EmbeddingTable)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let gz = reader.fill_buf().map_err(|e| Error::io(path, e))?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read> = if gz {
        Box::new(flate2::read::GzDecoder::new(reader))
    } else {
        Box::new(reader)
    };
    parse_pretrained(BufReader::new(reader), expected_dim).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_pretrained(reader: impl BufRead, expected_dim: usize) -> Result<(Vocab, EmbeddingTable)> {
    if expected_dim == 0 {
        return Err(Error::Invalid("embedding dimension must be positive".into()));
    }
    let mut vocab = Vocab::new(true);
    let mut data = vec![0.0; 2 * expected_dim];
    let mut sum = vec![0.0; expected_dim];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if fields.len() != expected_dim + 1 {
            return Err(Error::parse(
                i + 1,
                format!("expected {expected_dim} values, found {}", fields.len() - 1),
            ));
        }
        if vocab.contains(fields[0]) {
            log::warn!("line {}: repeated word {:?} ignored", i + 1, fields[0]);
            continue;
        }
        let mut row = Vec::with_capacity(expected_dim);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::parse(i + 1, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(i + 1, format!("non-finite value {f:?}")));
            }
            row.push(v);
        }
        vocab.insert(fields[0])?;
        for (s, v) in sum.iter_mut().zip(&row) {
            *s += v;
        }
        data.extend(row);
    }
    let loaded = vocab.len() - 2;
    if loaded > 0 {
        for (k, s) in sum.iter().enumerate() {
            data[expected_dim + k] = s / loaded as f64;
        }
    }
    vocab.freeze();
    let matrix = Tensor::matrix(vocab.len(), expected_dim, data)?;
    Ok((vocab, EmbeddingTable { matrix, trainable: false }))
}

//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! seed = 7
//! [ner]
//! architecture = CNN_BILSTM
//! lr = 0.0105
//! [rel]
//! kernel_widths = 2,3,4
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.
//! `#` and `;` start comment lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ner::NerConfig;
use crate::numcore::{OptimizerConfig, OptimizerKind};
use crate::relex::RelConfig;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(n + 1, format!("unterminated section header {line:?}")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, format!("expected key = value, found {line:?}")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(n + 1, "empty key"));
            }
            cfg.set(&section, k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Applies a `section.key=value` override; a key without a dot goes to
    /// the unnamed section.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (lhs, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("override {assignment:?} is not key=value")))?;
        let (section, key) = lhs.trim().rsplit_once('.').unwrap_or(("", lhs.trim()));
        self.set(section, key, value.trim());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.get(section, key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Invalid(format!("[{section}] {key} = {v:?} is not valid")))
            })
            .transpose()
    }

    pub fn section(&self, name: &str) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .get(name)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn apply_ner(&self, c: &mut NerConfig) -> Result<()> {
        for (k, v) in self.section("ner") {
            set_ner(c, k, v)?;
        }
        Ok(())
    }

    pub fn apply_rel(&self, c: &mut RelConfig) -> Result<()> {
        for (k, v) in self.section("rel") {
            set_rel(c, k, v)?;
        }
        Ok(())
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Invalid(format!("[{section}] {key} = {v:?} is not valid")))
}

fn unknown(section: &str, key: &str) -> Error {
    Error::Invalid(format!("unknown key [{section}] {key}"))
}

fn set_optimizer(o: &mut OptimizerConfig, section: &str, key: &str, v: &str) -> Result<bool> {
    match key {
        "lr" => o.lr = parse(section, key, v)?,
        "optimizer" => {
            o.kind = match v.to_ascii_lowercase().as_str() {
                "adam" => OptimizerKind::Adam,
                "nadam" => OptimizerKind::Nadam,
                _ => return Err(Error::Invalid(format!("[{section}] optimizer {v:?} is not adam or nadam"))),
            }
        }
        "clip_norm" => {
            o.clip_norm = match v.to_ascii_lowercase().as_str() {
                "none" | "off" | "0" => None,
                _ => Some(parse(section, key, v)?),
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_ner(c: &mut NerConfig, key: &str, v: &str) -> Result<()> {
    let s = "ner";
    if set_optimizer(&mut c.optimizer, s, key, v)? {
        return Ok(());
    }
    match key {
        "architecture" => c.architecture = v.parse()?,
        "embedding" => c.embedding = v.parse()?,
        "word_dim" => c.word_dim = parse(s, key, v)?,
        "char_dim" => c.char_dim = parse(s, key, v)?,
        "char_features" => c.char_features = parse(s, key, v)?,
        "conv_size" => c.conv_size = parse(s, key, v)?,
        "max_word_len" => c.max_word_len = parse(s, key, v)?,
        "lstm_units" => c.lstm_units = parse(s, key, v)?,
        "dense_units" => c.dense_units = parse(s, key, v)?,
        "dropout" => c.dropout = parse(s, key, v)?,
        "recurrent_dropout" => c.recurrent_dropout = parse(s, key, v)?,
        "batch_size" => c.batch_size = parse(s, key, v)?,
        "max_epochs" => c.max_epochs = parse(s, key, v)?,
        "patience" => c.patience = parse(s, key, v)?,
        "iob_constraints" => c.iob_constraints = parse(s, key, v)?,
        "seed" => c.seed = parse(s, key, v)?,
        _ => return Err(unknown(s, key)),
    }
    Ok(())
}

fn set_rel(c: &mut RelConfig, key: &str, v: &str) -> Result<()> {
    let s = "rel";
    if set_optimizer(&mut c.optimizer, s, key, v)? {
        return Ok(());
    }
    match key {
        "hidden" => c.hidden = parse(s, key, v)?,
        "n_layers" => c.n_layers = parse(s, key, v)?,
        "n_heads" => c.n_heads = parse(s, key, v)?,
        "ffn_dim" => c.ffn_dim = parse(s, key, v)?,
        "max_len" => c.max_len = parse(s, key, v)?,
        "kernel_widths" => {
            let w: Vec<usize> = v.split(',').map(|x| parse(s, key, x.trim())).collect::<Result<_>>()?;
            c.kernel_widths = w
                .try_into()
                .map_err(|_| Error::Invalid(format!("[rel] kernel_widths {v:?} needs exactly 3 values")))?;
        }
        "filters" => c.filters = parse(s, key, v)?,
        "encoder_dropout" => c.encoder_dropout = parse(s, key, v)?,
        "head_dropout" => c.head_dropout = parse(s, key, v)?,
        "epochs" => c.epochs = parse(s, key, v)?,
        "batch_size" => c.batch_size = parse(s, key, v)?,
        "n_per_class" => c.n_per_class = parse(s, key, v)?,
        "window" => c.window = parse(s, key, v)?,
        "seed" => c.seed = parse(s, key, v)?,
        _ => return Err(unknown(s, key)),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ner::Architecture;

    const TEXT: &str =
        "# experiment\nseed = 7\n\n[ner]\narchitecture = cnn-bilstm\nlr=0.02\nclip_norm = none\n[rel]\nkernel_widths = 1, 3, 5\n";

    #[test]
    fn parse_and_apply() {
        let cfg = ConfigFile::parse(TEXT).unwrap();
        assert_eq!(cfg.get_parsed::<u64>("", "seed").unwrap(), Some(7));
        let mut ner = NerConfig::bilstm_crf();
        cfg.apply_ner(&mut ner).unwrap();
        assert_eq!(ner.architecture, Architecture::CnnBilstm);
        assert_eq!(ner.optimizer.lr, 0.02);
        assert_eq!(ner.optimizer.clip_norm, None);
        let mut rel = RelConfig::default();
        cfg.apply_rel(&mut rel).unwrap();
        assert_eq!(rel.kernel_widths, [1, 3, 5]);
    }

    #[test]
    fn overrides_win() {
        let mut cfg = ConfigFile::parse(TEXT).unwrap();
        cfg.set_dotted("ner.lr=0.5").unwrap();
        cfg.set_dotted("seed=9").unwrap();
        let mut ner = NerConfig::bilstm_crf();
        cfg.apply_ner(&mut ner).unwrap();
        assert_eq!(ner.optimizer.lr, 0.5);
        assert_eq!(cfg.get("", "seed"), Some("9"));
    }

    #[test]
    fn errors() {
        assert!(matches!(ConfigFile::parse("[ner\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ConfigFile::parse("a = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        let cfg = ConfigFile::parse("[ner]\nbogus = 1\n").unwrap();
        assert!(cfg.apply_ner(&mut NerConfig::bilstm_crf()).is_err());
        let cfg = ConfigFile::parse("[rel]\nkernel_widths = 1,2\n").unwrap();
        assert!(cfg.apply_rel(&mut RelConfig::default()).is_err());
        let cfg = ConfigFile::parse("[ner]\nlstm_units = many\n").unwrap();
        assert!(cfg.apply_ner(&mut NerConfig::bilstm_crf()).is_err());
    }
}

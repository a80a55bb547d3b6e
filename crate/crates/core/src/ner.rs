//! BiLSTM-CRF and CNN-BiLSTM taggers over an IOB [`TagScheme`].
//!
//! Both architectures score the scheme's labels without `PAD`, so tag `k`
//! is label id `k + 1` and predictions never contain `PAD`. Sentences are
//! processed unpadded; a batch accumulates per-sentence gradients and
//! averages them over its tokens.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, LabeledSentence, TagScheme};
use crate::crf;
use crate::embed::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::layers::{bilstm, char_cnn, Activation, CharCnn, Dense, LstmParams};
use crate::numcore::{
    clip_global_norm, Checkpoint, DType, Graph, Optimizer, OptimizerConfig, ParamGrads, ParamId, ParamStore, Tensor, Var,
};
use crate::textproc::{casing_class, char_ids, CasingClass, CharVocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Architecture {
    BilstmCrf,
    CnnBilstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingSource {
    OneHot,
    RandomDense,
    Pretrained,
}

fn canonical(s: &str) -> String {
    s.trim().to_ascii_uppercase().replace('-', "_")
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match canonical(s).as_str() {
            "BILSTM_CRF" => Ok(Architecture::BilstmCrf),
            "CNN_BILSTM" => Ok(Architecture::CnnBilstm),
            _ => Err(Error::Invalid(format!("unknown architecture {s:?}"))),
        }
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match canonical(s).as_str() {
            "ONE_HOT" => Ok(EmbeddingSource::OneHot),
            "RANDOM_DENSE" => Ok(EmbeddingSource::RandomDense),
            "PRETRAINED" => Ok(EmbeddingSource::Pretrained),
            _ => Err(Error::Invalid(format!("unknown embedding source {s:?}"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::BilstmCrf => "BILSTM_CRF",
            Architecture::CnnBilstm => "CNN_BILSTM",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NerConfig {
    pub architecture: Architecture,
    pub embedding: EmbeddingSource,
    pub word_dim: usize,
    pub char_dim: usize,
    /// Filters of the character CNN, i.e. its output width.
    pub char_features: usize,
    pub conv_size: usize,
    pub max_word_len: usize,
    pub lstm_units: usize,
    /// Hidden tanh layer before the emission layer (BiLSTM-CRF only).
    pub dense_units: usize,
    /// After the word embedding (BiLSTM-CRF) or the character embedding
    /// (CNN-BiLSTM).
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    /// Pin IOB-invalid CRF transitions at `-inf`.
    pub iob_constraints: bool,
    pub seed: u64,
}

impl NerConfig {
    /// 50-d embeddings, 50 LSTM units, 100 dense units, dropout 0.2,
    /// batch 256, 30 epochs, Adam at 1e-4.
    pub fn bilstm_crf() -> Self {
        NerConfig {
            architecture: Architecture::BilstmCrf,
            embedding: EmbeddingSource::RandomDense,
            word_dim: 50,
            char_dim: 30,
            char_features: 30,
            conv_size: 3,
            max_word_len: 20,
            lstm_units: 50,
            dense_units: 100,
            dropout: 0.2,
            recurrent_dropout: 0.0,
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            optimizer: OptimizerConfig::adam(1e-4),
            iob_constraints: false,
            seed: 0,
        }
    }

    /// 30-d characters with dropout 0.5, width-3 convolution, 50-d GloVe
    /// words, 200 LSTM units with recurrent dropout 0.25, Nadam at 0.0105.
    pub fn cnn_bilstm() -> Self {
        NerConfig {
            architecture: Architecture::CnnBilstm,
            embedding: EmbeddingSource::Pretrained,
            lstm_units: 200,
            dropout: 0.5,
            recurrent_dropout: 0.25,
            batch_size: 32,
            optimizer: OptimizerConfig::nadam(0.0105),
            ..Self::bilstm_crf()
        }
    }

    pub fn for_architecture(a: Architecture) -> Self {
        match a {
            Architecture::BilstmCrf => Self::bilstm_crf(),
            Architecture::CnnBilstm => Self::cnn_bilstm(),
        }
    }

    /// Width of the per-token CNN-BiLSTM input: character features, word
    /// vector and casing one-hot.
    pub fn concat_width(&self, word_width: usize) -> usize {
        self.char_features + word_width + CasingClass::ALL.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_features", self.char_features),
            ("conv_size", self.conv_size),
            ("max_word_len", self.max_word_len),
            ("lstm_units", self.lstm_units),
            ("dense_units", self.dense_units),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        for (name, p) in [("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} {p} outside [0, 1)")));
            }
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.optimizer.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Net {
    Crf {
        word: Option<ParamId>,
        fwd: LstmParams,
        bwd: LstmParams,
        hidden: Dense,
        emit: Dense,
        trans: ParamId,
    },
    Cnn {
        word: Option<ParamId>,
        chars: ParamId,
        cnn: CharCnn,
        fwd: LstmParams,
        bwd: LstmParams,
        out: Dense,
    },
}

#[derive(Clone, Debug)]
pub struct NerModel {
    pub config: NerConfig,
    pub scheme: TagScheme,
    pub vocab: Vocab,
    pub chars: CharVocab,
    store: ParamStore,
    net: Net,
}

struct Encoded {
    words: Vec<usize>,
    chars: Vec<usize>,
    chars_per_token: usize,
    casing: Vec<usize>,
}

fn check_inputs(config: &NerConfig, vocab: &Vocab, scheme: &TagScheme, expected: Architecture) -> Result<()> {
    config.validate()?;
    if config.architecture != expected {
        return Err(Error::Invalid(format!(
            "config architecture {} does not match builder {expected}",
            config.architecture
        )));
    }
    if vocab.len() <= 2 {
        return Err(Error::Invalid("vocabulary has no words".into()));
    }
    if scheme.base_tags().is_empty() {
        return Err(Error::Invalid(format!("tag scheme {} has no tags", scheme.name())));
    }
    Ok(())
}

/// Word representation parameter and its width.
fn word_table(
    store: &mut ParamStore,
    config: &NerConfig,
    vocab: &Vocab,
    pretrained: Option<EmbeddingTable>,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<ParamId>, usize)> {
    match config.embedding {
        EmbeddingSource::OneHot => Ok((None, vocab.len())),
        EmbeddingSource::RandomDense => {
            let mut t = Tensor::zeros(vocab.len(), config.word_dim);
            for v in &mut t.data_mut()[config.word_dim..] {
                *v = rng.gen_range(-0.1..0.1);
            }
            Ok((Some(store.add("ner.word", t, true)), config.word_dim))
        }
        EmbeddingSource::Pretrained => {
            let table = pretrained.ok_or_else(|| Error::Invalid("PRETRAINED embedding needs a vector table".into()))?;
            if table.rows() != vocab.len() {
                return Err(Error::Shape {
                    op: "pretrained table",
                    left: vec![table.rows(), table.dim()],
                    right: vec![vocab.len()],
                });
            }
            let dim = table.dim();
            Ok((Some(store.add("ner.word", table.matrix, table.trainable)), dim))
        }
    }
}

/// Embedding → dropout → BiLSTM → dense tanh → emissions → CRF.
pub fn build_bilstm_crf(config: &NerConfig, vocab: Vocab, scheme: TagScheme, pretrained: Option<EmbeddingTable>) -> Result<NerModel> {
    check_inputs(config, &vocab, &scheme, Architecture::BilstmCrf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let (word, width) = word_table(&mut store, config, &vocab, pretrained, &mut rng)?;
    let h = config.lstm_units;
    let fwd = LstmParams::new(&mut store, "ner.lstm_fwd", width, h, &mut rng);
    let bwd = LstmParams::new(&mut store, "ner.lstm_bwd", width, h, &mut rng);
    let hidden = Dense::new(&mut store, "ner.hidden", 2 * h, config.dense_units, Activation::Tanh, &mut rng);
    let n_tags = scheme.len() - 1;
    let emit = Dense::new(&mut store, "ner.emit", config.dense_units, n_tags, Activation::Identity, &mut rng);
    let mut t = crf::masked_transitions(n_tags, || rng.gen_range(-0.1..0.1));
    if config.iob_constraints {
        crf::apply_iob_constraints(&mut t, &scheme.labels()[1..]);
    }
    let trans = store.add("ner.crf", t, true);
    Ok(NerModel {
        config: config.clone(),
        scheme,
        vocab,
        chars: CharVocab::new(),
        store,
        net: Net::Crf {
            word,
            fwd,
            bwd,
            hidden,
            emit,
            trans,
        },
    })
}

/// Character embedding → dropout → character CNN, concatenated with the
/// word vector and casing one-hot → BiLSTM → dense softmax.
pub fn build_cnn_bilstm(
    config: &NerConfig,
    vocab: Vocab,
    chars: CharVocab,
    scheme: TagScheme,
    pretrained: Option<EmbeddingTable>,
) -> Result<NerModel> {
    check_inputs(config, &vocab, &scheme, Architecture::CnnBilstm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let (word, width) = word_table(&mut store, config, &vocab, pretrained, &mut rng)?;
    let mut ct = Tensor::zeros(chars.size(), config.char_dim);
    for v in &mut ct.data_mut()[config.char_dim..] {
        *v = rng.gen_range(-0.5..0.5);
    }
    let char_table = store.add("ner.chars", ct, true);
    let cnn = CharCnn::new(
        &mut store,
        "ner.char_cnn",
        config.char_dim,
        config.conv_size,
        config.char_features,
        Activation::Tanh,
        &mut rng,
    );
    let input = config.concat_width(width);
    let h = config.lstm_units;
    let fwd = LstmParams::new(&mut store, "ner.lstm_fwd", input, h, &mut rng);
    let bwd = LstmParams::new(&mut store, "ner.lstm_bwd", input, h, &mut rng);
    let out = Dense::new(&mut store, "ner.out", 2 * h, scheme.len() - 1, Activation::Identity, &mut rng);
    Ok(NerModel {
        config: config.clone(),
        scheme,
        vocab,
        chars,
        store,
        net: Net::Cnn {
            word,
            chars: char_table,
            cnn,
            fwd,
            bwd,
            out,
        },
    })
}

/// Word vocabulary (and character inventory) over training sentences.
pub fn build_vocabs(sentences: &[LabeledSentence], lowercase: bool) -> (Vocab, CharVocab) {
    let words = sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str));
    let vocab = Vocab::from_words(words.clone(), lowercase);
    (vocab, CharVocab::from_words(words))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest validation loss (training loss without a
    /// validation set).
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    /// `epoch,train_loss,train_acc,val_loss,val_acc`; missing validation
    /// values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            ));
        }
        out
    }
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row_slice(r);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

impl NerModel {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Trainable scalars, excluding CRF transitions pinned at `-inf`.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn num_tags(&self) -> usize {
        self.scheme.len() - 1
    }

    /// CRF transition matrix, `(T + 2) x (T + 2)`.
    pub fn transitions(&self) -> Option<&Tensor> {
        match &self.net {
            Net::Crf { trans, .. } => Some(self.store.get(*trans)),
            Net::Cnn { .. } => None,
        }
    }

    fn encode(&self, tokens: &[String]) -> Result<Encoded> {
        let words = self.vocab.encode(tokens);
        let longest = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(1);
        let chars_per_token = longest.clamp(1, self.config.max_word_len);
        let mut chars = Vec::with_capacity(tokens.len() * chars_per_token);
        let mut casing = Vec::with_capacity(tokens.len());
        for t in tokens {
            chars.extend(char_ids(t, &self.chars, chars_per_token));
            casing.push(casing_class(t).unwrap_or(CasingClass::Other).index());
        }
        Ok(Encoded {
            words,
            chars,
            chars_per_token,
            casing,
        })
    }

    fn word_features(&self, g: &mut Graph, word: Option<ParamId>, ids: &[usize]) -> Result<Var> {
        match word {
            Some(table) => {
                let t = g.param(table);
                g.gather(t, ids, true)
            }
            None => {
                let v = self.vocab.len();
                let mut t = Tensor::zeros(ids.len(), v);
                for (r, &id) in ids.iter().enumerate() {
                    t.set(r, id, 1.0);
                }
                Ok(g.input(t))
            }
        }
    }

    /// Emission scores (BiLSTM-CRF) or pre-softmax logits (CNN-BiLSTM),
    /// `L x T`.
    fn scores(&self, g: &mut Graph, enc: &Encoded) -> Result<Var> {
        let c = &self.config;
        match &self.net {
            Net::Crf {
                word,
                fwd,
                bwd,
                hidden,
                emit,
                ..
            } => {
                let x = self.word_features(g, *word, &enc.words)?;
                let x = g.dropout(x, c.dropout)?;
                let h = bilstm(g, x, fwd, bwd, c.recurrent_dropout)?;
                let h = hidden.forward(g, h)?;
                emit.forward(g, h)
            }
            Net::Cnn {
                word,
                chars,
                cnn,
                fwd,
                bwd,
                out,
            } => {
                let table = g.param(*chars);
                let ce = g.gather(table, &enc.chars, true)?;
                let ce = g.dropout(ce, c.dropout)?;
                let cf = char_cnn(g, ce, enc.chars_per_token, cnn)?;
                let wf = self.word_features(g, *word, &enc.words)?;
                let n_case = CasingClass::ALL.len();
                let mut casing = Tensor::zeros(enc.casing.len(), n_case);
                for (r, &k) in enc.casing.iter().enumerate() {
                    casing.set(r, k, 1.0);
                }
                let casing = g.input(casing);
                let x = g.concat_cols(&[cf, wf, casing])?;
                let h = bilstm(g, x, fwd, bwd, c.recurrent_dropout)?;
                out.forward(g, h)
            }
        }
    }

    /// Loss node and predicted tags for one labelled sentence.
    fn loss(&self, g: &mut Graph, enc: &Encoded, gold: &[usize]) -> Result<(Var, Vec<usize>)> {
        let scores = self.scores(g, enc)?;
        match &self.net {
            Net::Crf { trans, .. } => {
                let em = g.value(scores).clone();
                let tr = self.store.get(*trans);
                let nll = crf::nll(&em, tr, gold)?;
                let (pred, _) = crf::viterbi(&em, tr)?;
                let tv = g.param(*trans);
                let loss = g.scalar_fn(
                    vec![scores, tv],
                    nll.loss,
                    vec![nll.d_emissions.into_data(), nll.d_transitions.into_data()],
                )?;
                Ok((loss, pred))
            }
            Net::Cnn { .. } => {
                let pred = argmax_rows(g.value(scores));
                Ok((g.softmax_cross_entropy(scores, gold)?, pred))
            }
        }
    }

    fn gold_tags(&self, s: &LabeledSentence) -> Result<Vec<usize>> {
        if s.tokens.len() != s.labels.len() {
            return Err(Error::Shape {
                op: "labeled sentence",
                left: vec![s.tokens.len()],
                right: vec![s.labels.len()],
            });
        }
        self.scheme
            .encode(&s.labels)?
            .into_iter()
            .map(|id| {
                id.checked_sub(1)
                    .ok_or_else(|| Error::Invalid(format!("{} label on a real token", TagScheme::PAD)))
            })
            .collect()
    }

    /// Per-token loss and accuracy in evaluation mode.
    pub fn evaluate(&self, sentences: &[LabeledSentence]) -> Result<(f64, f64)> {
        let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
        for s in sentences.iter().filter(|s| !s.is_empty()) {
            let gold = self.gold_tags(s)?;
            let enc = self.encode(&s.tokens)?;
            let mut g = Graph::new(&self.store, false, 0);
            let (l, pred) = self.loss(&mut g, &enc, &gold)?;
            loss += g.value(l).as_scalar();
            correct += pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
            total += gold.len();
        }
        if total == 0 {
            return Ok((0.0, 0.0));
        }
        Ok((loss / total as f64, correct as f64 / total as f64))
    }

    /// Emission scores or logits for `tokens` in evaluation mode.
    pub fn emissions(&self, tokens: &[String]) -> Result<Tensor> {
        let enc = self.encode(tokens)?;
        let mut g = Graph::new(&self.store, false, 0);
        let s = self.scores(&mut g, &enc)?;
        Ok(g.value(s).clone())
    }

    /// IOB labels for one sentence: Viterbi for BiLSTM-CRF, per-token
    /// argmax for CNN-BiLSTM.
    pub fn predict_sentence(&self, tokens: &[String]) -> Result<Vec<String>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let em = self.emissions(tokens)?;
        let tags = match self.transitions() {
            Some(tr) => crf::viterbi(&em, tr)?.0,
            None => argmax_rows(&em),
        };
        let ids: Vec<usize> = tags.into_iter().map(|t| t + 1).collect();
        self.scheme.decode(&ids)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": "ner",
            "config": self.config,
            "scheme": self.scheme,
            "vocab": self.vocab,
            "chars": self.chars,
        });
        Checkpoint::from_store(meta, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("ner") {
            return Err(Error::Checkpoint("not an NER checkpoint".into()));
        }
        let field = |name: &str| meta.get(name).cloned().ok_or_else(|| Error::Checkpoint(format!("missing {name}")));
        let config: NerConfig = serde_json::from_value(field("config")?)?;
        let scheme: TagScheme = serde_json::from_value(field("scheme")?)?;
        let mut vocab: Vocab = serde_json::from_value(field("vocab")?)?;
        vocab.reindex();
        let chars: CharVocab = serde_json::from_value(field("chars")?)?;
        let pretrained = match config.embedding {
            EmbeddingSource::Pretrained => {
                let (_, t) = ck
                    .tensors
                    .iter()
                    .find(|(n, _)| n == "ner.word")
                    .ok_or_else(|| Error::Checkpoint("missing ner.word".into()))?;
                Some(EmbeddingTable {
                    matrix: t.clone(),
                    trainable: false,
                })
            }
            _ => None,
        };
        let mut model = match config.architecture {
            Architecture::BilstmCrf => build_bilstm_crf(&config, vocab, scheme, pretrained)?,
            Architecture::CnnBilstm => build_cnn_bilstm(&config, vocab, chars, scheme, pretrained)?,
        };
        model.store.load_values(ck.tensor_refs())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path, DType::F64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Mini-batch training with early stopping on validation loss (training
/// loss when `val` is empty). The returned model holds the best epoch's
/// parameters; with `checkpoint` set they are also written there after
/// every improvement.
pub fn train_ner(
    mut model: NerModel,
    train: &[LabeledSentence],
    val: &[LabeledSentence],
    checkpoint: Option<&Path>,
) -> Result<(NerModel, TrainingHistory)> {
    let data: Vec<(Encoded, Vec<usize>)> = train
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| Ok((model.encode(&s.tokens)?, model.gold_tags(s)?)))
        .collect::<Result<_>>()?;
    if data.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    let mut history = TrainingHistory::default();
    let config = model.config.clone();
    let mut opt = Optimizer::new(config.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut graph_seed = config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = ParamGrads::zeros_like(&model.store);
            let mut tokens = 0;
            for &i in batch {
                let (enc, gold) = &data[i];
                graph_seed = graph_seed.wrapping_add(1);
                let mut g = Graph::new(&model.store, true, graph_seed);
                let (loss, pred) = model.loss(&mut g, enc, gold)?;
                let lv = g.value(loss).as_scalar();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {batch_no}")));
                }
                grads.accumulate(&g.backward(loss)?);
                loss_sum += lv;
                correct += pred.iter().zip(gold).filter(|(a, b)| a == b).count();
                tokens += gold.len();
            }
            total += tokens;
            grads.scale(1.0 / tokens as f64);
            if let Some(max) = config.optimizer.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            opt.step(&mut model.store, &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batch_no}: {e}")))?;
        }
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = model.evaluate(val)?;
            (Some(l), Some(a))
        };
        let train_loss = loss_sum / total as f64;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: correct as f64 / total as f64,
            val_loss,
            val_acc,
        });
        log::info!("ner epoch {epoch}: loss {train_loss:.4} val {val_loss:?}");
        let monitored = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
            best = Some((monitored, model.store.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
            if let Some(path) = checkpoint {
                model.save(path)?;
            }
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok((model, history))
}

/// IOB labels for every sentence of `doc`.
pub fn predict_tags(model: &NerModel, doc: &AnnotatedDocument) -> Result<Vec<Vec<String>>> {
    doc.sentence_token_ranges()
        .into_iter()
        .map(|r| {
            let tokens: Vec<String> = doc.tokens[r].iter().map(|t| t.text.clone()).collect();
            model.predict_sentence(&tokens)
        })
        .collect()
}

const FIXTURE_WORDS: [(&str, &[&str]); 5] = [
    (
        "O",
        &["the", "patient", "was", "given", "and", "then", "for", "with", "daily", "pain"],
    ),
    ("B-drug", &["aspirin", "heparin", "insulin", "lasix", "coumadin"]),
    ("I-drug", &["forte", "xr"]),
    ("B-dose", &["10", "20", "five"]),
    ("I-dose", &["mg", "units"]),
];

/// Sentences where every word has exactly one label, so a tagger can fit
/// them perfectly. Tags are `drug` and `dose`.
pub fn separable_fixture(n_sentences: usize, seed: u64) -> (TagScheme, Vec<LabeledSentence>) {
    let scheme = TagScheme::new("fixture", &["drug", "dose"]).expect("fixture tags");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, k: usize| FIXTURE_WORDS[k].1[rng.gen_range(0..FIXTURE_WORDS[k].1.len())].to_string();
    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let mut s = LabeledSentence::default();
        let target = rng.gen_range(5..11);
        while s.len() < target {
            let chunk: Vec<usize> = match rng.gen_range(0..4) {
                0 => (0..1 + rng.gen_range(0..2)).map(|i| if i == 0 { 1 } else { 2 }).collect(),
                1 => (0..1 + rng.gen_range(0..2)).map(|i| if i == 0 { 3 } else { 4 }).collect(),
                _ => vec![0],
            };
            for k in chunk {
                s.tokens.push(pick(&mut rng, k));
                s.labels.push(FIXTURE_WORDS[k].0.to_string());
            }
        }
        out.push(s);
    }
    (scheme, out)
}

/// Fraction of tokens whose predicted label equals the gold label.
pub fn token_accuracy(model: &NerModel, sentences: &[LabeledSentence]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for s in sentences {
        let pred = model.predict_sentence(&s.tokens)?;
        correct += pred.iter().zip(&s.labels).filter(|(a, b)| a == b).count();
        total += s.labels.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Configurations that fit [`separable_fixture`] within 30 epochs on a
/// laptop: paper architectures with small batches and, for BiLSTM-CRF, a
/// larger learning rate than the full-corpus default.
pub fn fixture_config(architecture: Architecture, seed: u64) -> NerConfig {
    let mut c = NerConfig::for_architecture(architecture);
    c.embedding = EmbeddingSource::RandomDense;
    c.batch_size = 5;
    c.max_epochs = 30;
    c.seed = seed;
    if architecture == Architecture::BilstmCrf {
        c.optimizer = OptimizerConfig::adam(0.01);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NerConfig {
        NerConfig {
            word_dim: 4,
            lstm_units: 3,
            dense_units: 5,
            ..NerConfig::bilstm_crf()
        }
    }

    #[test]
    fn tiny_param_count_closed_form() {
        let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::from_words(words.iter().map(String::as_str), false);
        assert_eq!(vocab.len(), 10);
        let scheme = TagScheme::new("one", &["x"]).unwrap();
        let m = build_bilstm_crf(&tiny_config(), vocab, scheme, None).unwrap();
        let (v, d, h, dense, t) = (10, 4, 3, 5, 3);
        let lstm_dir = 4 * (d * h + h * h + h);
        // (T+2)^2 transitions minus the column into START and the row out
        // of STOP, which share one entry.
        let trans = (t + 2) * (t + 2) - (2 * (t + 2) - 1);
        let expected = v * d + 2 * lstm_dir + (2 * h * dense + dense) + (dense * t + t) + trans;
        assert_eq!(expected, 301);
        assert_eq!(m.param_count(), expected);
    }

    #[test]
    fn builder_errors() {
        let scheme = TagScheme::medication();
        assert!(build_bilstm_crf(&tiny_config(), Vocab::new(false), scheme.clone(), None).is_err());
        let vocab = Vocab::from_words(["a"], false);
        assert!(build_bilstm_crf(&NerConfig::cnn_bilstm(), vocab.clone(), scheme.clone(), None).is_err());
        let mut bad = tiny_config();
        bad.dropout = 1.0;
        assert!(build_bilstm_crf(&bad, vocab.clone(), scheme.clone(), None).is_err());
        let mut pre = tiny_config();
        pre.embedding = EmbeddingSource::Pretrained;
        assert!(build_bilstm_crf(&pre, vocab, scheme, None).is_err());
    }

    #[test]
    fn concat_width_law() {
        let c = NerConfig::cnn_bilstm();
        assert_eq!(c.concat_width(50), 86);
        let narrow = NerConfig { char_features: 24, ..c };
        assert_eq!(narrow.concat_width(50), 80);
        assert_eq!(NerConfig::cnn_bilstm().optimizer.kind, crate::numcore::OptimizerKind::Nadam);
    }

    #[test]
    fn same_seed_same_init() {
        let (scheme, data) = separable_fixture(5, 1);
        let (vocab, chars) = build_vocabs(&data, false);
        let c = fixture_config(Architecture::CnnBilstm, 3);
        let a = build_cnn_bilstm(&c, vocab.clone(), chars.clone(), scheme.clone(), None).unwrap();
        let b = build_cnn_bilstm(&c, vocab, chars, scheme, None).unwrap();
        assert_eq!(
            a.to_checkpoint().to_bytes(DType::F64).unwrap(),
            b.to_checkpoint().to_bytes(DType::F64).unwrap()
        );
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (scheme, data) = separable_fixture(6, 2);
        let (vocab, _) = build_vocabs(&data, false);
        let mut c = fixture_config(Architecture::BilstmCrf, 0);
        c.max_epochs = 0;
        let m = build_bilstm_crf(&c, vocab, scheme, None).unwrap();
        let before = m.to_checkpoint();
        let (after, hist) = train_ner(m, &data, &[], None).unwrap();
        assert!(hist.epochs.is_empty());
        assert_eq!(after.to_checkpoint(), before);
    }

    #[test]
    fn fixture_is_separable_and_well_formed() {
        let (scheme, data) = separable_fixture(50, 7);
        assert_eq!(data.len(), 50);
        let mut seen = std::collections::HashMap::new();
        for s in &data {
            assert_eq!(s.tokens.len(), s.labels.len());
            for (i, (w, l)) in s.tokens.iter().zip(&s.labels).enumerate() {
                assert_eq!(seen.entry(w.clone()).or_insert(l.clone()), l);
                if let Some(tag) = l.strip_prefix("I-") {
                    assert!(i > 0 && s.labels[i - 1].ends_with(tag));
                }
                scheme.id(l).unwrap();
            }
        }
    }

    #[test]
    fn empty_sentence_and_document() {
        let (scheme, data) = separable_fixture(3, 0);
        let (vocab, _) = build_vocabs(&data, false);
        let m = build_bilstm_crf(&tiny_config(), vocab, scheme, None).unwrap();
        assert!(m.predict_sentence(&[]).unwrap().is_empty());
        let doc = AnnotatedDocument::from_text("e", "");
        assert!(predict_tags(&m, &doc).unwrap().iter().all(Vec::is_empty));
    }
}

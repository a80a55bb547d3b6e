//! Event–time relation candidates and the encoder + CNN classifier over
//! `{AFTER, OVERLAP, BEFORE}`.
//!
//! Labels are read `event REL time`; a TLINK annotated from the time to the
//! event is inverted. Contexts are
//! `[CLS] event-sentence [SEP] (time-sentence [SEP])` with `[E] … [/E]` and
//! `[T] … [/T]` around the two spans; the second sentence, when present,
//! has segment id 1.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, EntitySpan, Relation, TLink};
use crate::embed::Vocab;
use crate::error::{Error, Result, Warnings};
use crate::layers::{transformer_encode, Activation, Dense, EncoderConfig, EncoderParams};
use crate::medstatus::{find_anchor_dates, find_date_spans};
use crate::numcore::{
    clip_global_norm, softmax, Checkpoint, DType, Graph, Optimizer, OptimizerConfig, ParamGrads, ParamId, ParamStore, Var,
};

pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const E_OPEN: usize = 4;
pub const E_CLOSE: usize = 5;
pub const T_OPEN: usize = 6;
pub const T_CLOSE: usize = 7;
pub const RESERVED: [&str; 6] = ["[CLS]", "[SEP]", "[E]", "[/E]", "[T]", "[/T]"];

/// Lower-cased vocabulary whose ids 2..8 are the reserved markers.
pub fn rel_vocab<'a>(words: impl IntoIterator<Item = &'a str>) -> Vocab {
    let mut v = Vocab::new(true);
    for r in RESERVED {
        v.insert(r).expect("fresh vocabulary");
    }
    for w in words {
        v.insert(w).expect("unfrozen vocabulary");
    }
    v.freeze();
    v
}

/// Vocabulary over every token of `docs`.
pub fn rel_vocab_from_docs(docs: &[AnnotatedDocument]) -> Vocab {
    rel_vocab(docs.iter().flat_map(|d| d.tokens.iter().map(|t| t.text.as_str())))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: Option<String>,
    pub span: EntitySpan,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub doc_id: String,
    pub event: EntitySpan,
    pub time: EntitySpan,
    pub context: Vec<usize>,
    pub segments: Vec<usize>,
    pub label: Option<Relation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOptions {
    /// Largest sentence distance between the two spans.
    pub window: usize,
    pub max_len: usize,
    /// Pair every event with the admission and discharge dates regardless
    /// of distance.
    pub anchor_pairs: bool,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            window: 2,
            max_len: 128,
            anchor_pairs: true,
        }
    }
}

fn by_position(map: &std::collections::BTreeMap<String, EntitySpan>) -> Vec<Mention> {
    let mut v: Vec<Mention> = map
        .iter()
        .map(|(id, s)| Mention {
            id: Some(id.clone()),
            span: s.clone(),
        })
        .collect();
    v.sort_by_key(|m| (m.span.start, m.span.end));
    v
}

/// Annotated events and time expressions, in textual order.
pub fn gold_mentions(doc: &AnnotatedDocument) -> (Vec<Mention>, Vec<Mention>) {
    (by_position(&doc.events), by_position(&doc.timexes))
}

fn gold_label(tlinks: &[TLink], event: &Mention, time: &Mention) -> Option<Relation> {
    let (e, t) = (event.id.as_deref()?, time.id.as_deref()?);
    tlinks.iter().find_map(|l| {
        if l.source == e && l.target == t {
            Some(l.relation)
        } else if l.source == t && l.target == e {
            Some(l.relation.inverse())
        } else {
            None
        }
    })
}

fn sentence_ids(
    doc: &AnnotatedDocument,
    sent: usize,
    ranges: &[std::ops::Range<usize>],
    vocab: &Vocab,
    marks: &[(&EntitySpan, usize, usize)],
) -> Vec<usize> {
    let mut out = Vec::new();
    for i in ranges[sent].clone() {
        for &(s, open, _) in marks {
            if s.start == i {
                out.push(open);
            }
        }
        out.push(vocab.get(&doc.tokens[i].text));
        for &(s, _, close) in marks.iter().rev() {
            if s.end == i {
                out.push(close);
            }
        }
    }
    out
}

/// Marked context and segment ids for one pair.
pub fn build_context(doc: &AnnotatedDocument, event: &EntitySpan, time: &EntitySpan, vocab: &Vocab) -> (Vec<usize>, Vec<usize>) {
    let ranges = doc.sentence_token_ranges();
    let se = doc.tokens[event.start].sentence_index;
    let st = doc.tokens[time.start].sentence_index;
    let e_mark = (event, E_OPEN, E_CLOSE);
    let t_mark = (time, T_OPEN, T_CLOSE);
    let mut context = vec![CLS];
    if se == st {
        let mut marks = [e_mark, t_mark];
        // the outer span opens first when both start on the same token
        marks.sort_by_key(|(s, _, _)| (s.start, std::cmp::Reverse(s.end)));
        context.extend(sentence_ids(doc, se, &ranges, vocab, &marks));
        context.push(SEP);
        let n = context.len();
        return (context, vec![0; n]);
    }
    context.extend(sentence_ids(doc, se, &ranges, vocab, &[e_mark]));
    context.push(SEP);
    let first = context.len();
    context.extend(sentence_ids(doc, st, &ranges, vocab, &[t_mark]));
    context.push(SEP);
    let mut segments = vec![0; first];
    segments.resize(context.len(), 1);
    (context, segments)
}

/// One instance per (event, time) pair within `window` sentences, plus
/// anchor-date pairs when enabled. Pairs whose context exceeds `max_len`
/// are skipped (`context_overflow`).
pub fn generate_candidates(
    doc: &AnnotatedDocument,
    events: &[Mention],
    times: &[Mention],
    vocab: &Vocab,
    opts: &CandidateOptions,
) -> (Vec<RelationInstance>, Warnings) {
    let mut warnings = Warnings::new();
    let anchors: Vec<(usize, usize)> = if opts.anchor_pairs {
        let spans: Vec<EntitySpan> = times.iter().map(|m| m.span.clone()).collect();
        let (a, _) = find_anchor_dates(doc, &spans);
        [a.admission, a.discharge]
            .into_iter()
            .flatten()
            .map(|d| (d.span.start, d.span.end))
            .collect()
    } else {
        Vec::new()
    };
    let sent = |s: &EntitySpan| doc.tokens[s.start].sentence_index;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in events {
        for t in times {
            let near = sent(&e.span).abs_diff(sent(&t.span)) <= opts.window;
            if !near && !anchors.contains(&(t.span.start, t.span.end)) {
                continue;
            }
            if !seen.insert((e.span.start, e.span.end, t.span.start, t.span.end)) {
                continue;
            }
            let (context, segments) = build_context(doc, &e.span, &t.span, vocab);
            if context.len() > opts.max_len {
                warnings.bump("context_overflow");
                continue;
            }
            out.push(RelationInstance {
                doc_id: doc.doc_id.clone(),
                event: e.span.clone(),
                time: t.span.clone(),
                context,
                segments,
                label: gold_label(&doc.tlinks, e, t),
            });
        }
    }
    (out, warnings)
}

/// Candidates over the document's annotated events and timexes.
pub fn gold_candidates(doc: &AnnotatedDocument, vocab: &Vocab, opts: &CandidateOptions) -> (Vec<RelationInstance>, Warnings) {
    let (events, times) = gold_mentions(doc);
    generate_candidates(doc, &events, &times, vocab, opts)
}

/// Exactly `n_per_class` instances of each class, shuffled. Without
/// replacement a short class is an error.
pub fn downsample_balanced(
    instances: &[RelationInstance],
    n_per_class: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<RelationInstance>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, inst) in instances.iter().enumerate() {
        let label = inst
            .label
            .ok_or_else(|| Error::Invalid(format!("unlabeled instance in {}", inst.doc_id)))?;
        by_class[label.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(3 * n_per_class);
    for (k, idx) in by_class.iter_mut().enumerate() {
        if with_replacement {
            if idx.is_empty() && n_per_class > 0 {
                return Err(Error::Invalid(format!("class {} has no instances", Relation::ALL[k])));
            }
            chosen.extend((0..n_per_class).map(|_| idx[rng.gen_range(0..idx.len())]));
        } else {
            if idx.len() < n_per_class {
                return Err(Error::Invalid(format!(
                    "class {} has {} instances, {n_per_class} requested",
                    Relation::ALL[k],
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            chosen.extend_from_slice(&idx[..n_per_class]);
        }
    }
    chosen.shuffle(&mut rng);
    Ok(chosen.into_iter().map(|i| instances[i].clone()).collect())
}

fn span_field(s: &EntitySpan) -> String {
    format!("{}:{}:{}", s.tag, s.start, s.end)
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Tab-separated: doc id, event `tag:start:end`, time `tag:start:end`,
/// label (`-` when absent), context ids, segment ids.
pub fn dump_instances(instances: &[RelationInstance]) -> String {
    let mut out = String::new();
    for i in instances {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            i.doc_id,
            span_field(&i.event),
            span_field(&i.time),
            i.label.map_or("-", Relation::as_str),
            join_ids(&i.context),
            join_ids(&i.segments)
        ));
    }
    out
}

pub fn parse_instances(text: &str) -> Result<Vec<RelationInstance>> {
    let span = |line: usize, f: &str| -> Result<EntitySpan> {
        let mut parts = f.rsplitn(3, ':');
        let (end, start, tag) = (parts.next(), parts.next(), parts.next());
        match (tag, start.and_then(|s| s.parse().ok()), end.and_then(|s| s.parse().ok())) {
            (Some(tag), Some(start), Some(end)) => Ok(EntitySpan {
                tag: tag.to_string(),
                start,
                end,
                surface: String::new(),
            }),
            _ => Err(Error::parse(line, format!("bad span {f:?}"))),
        }
    };
    let ids = |line: usize, f: &str| -> Result<Vec<usize>> {
        f.split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::parse(line, format!("bad id {x:?}"))))
            .collect()
    };
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(line, format!("expected 6 fields, found {}", f.len())));
        }
        let label = match f[3] {
            "-" => None,
            s => Some(s.parse().map_err(|_| Error::parse(line, format!("bad label {s:?}")))?),
        };
        let inst = RelationInstance {
            doc_id: f[0].to_string(),
            event: span(line, f[1])?,
            time: span(line, f[2])?,
            label,
            context: ids(line, f[4])?,
            segments: ids(line, f[5])?,
        };
        if inst.context.len() != inst.segments.len() {
            return Err(Error::parse(line, "context and segment lengths differ"));
        }
        out.push(inst);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelConfig {
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub kernel_widths: [usize; 3],
    pub filters: usize,
    pub encoder_dropout: f64,
    pub head_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub n_per_class: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for RelConfig {
    /// Desk-scale encoder; 5 epochs at Adam 1e-3.
    fn default() -> Self {
        RelConfig {
            hidden: 32,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 64,
            max_len: 128,
            kernel_widths: [2, 3, 4],
            filters: 16,
            encoder_dropout: 0.1,
            head_dropout: 0.5,
            epochs: 5,
            batch_size: 8,
            optimizer: OptimizerConfig::adam(1e-3),
            n_per_class: 3000,
            window: 2,
            seed: 0,
        }
    }
}

impl RelConfig {
    /// Candidate pairing that matches what the model was trained on.
    pub fn candidate_options(&self) -> CandidateOptions {
        CandidateOptions {
            window: self.window,
            max_len: self.max_len,
            anchor_pairs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.kernel_widths;
        if a == b || b == c || a == c {
            return Err(Error::Invalid(format!("kernel widths {:?} must be distinct", self.kernel_widths)));
        }
        if let Some(w) = self.kernel_widths.iter().find(|&&w| w == 0 || w > self.max_len) {
            return Err(Error::range("kernel width", *w, self.max_len + 1));
        }
        for (name, p) in [("encoder_dropout", self.encoder_dropout), ("head_dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} {p} outside [0, 1)")));
            }
        }
        if self.filters == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("filters and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            n_segments: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelModel {
    pub config: RelConfig,
    pub vocab: Vocab,
    store: ParamStore,
    encoder: EncoderParams,
    convs: Vec<(usize, ParamId, ParamId)>,
    head: Dense,
}

impl RelModel {
    pub fn new(config: &RelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if vocab.len() <= RESERVED.len() + 2 {
            return Err(Error::Invalid("relation vocabulary has no words".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, "rel.enc", config.encoder(vocab.len()), &mut rng)?;
        let h = config.hidden;
        let convs = config
            .kernel_widths
            .iter()
            .map(|&w| {
                let wt = store.add_glorot(format!("rel.conv{w}.w"), w * h, config.filters, &mut rng);
                let b = store.add_zeros(format!("rel.conv{w}.b"), 1, config.filters);
                (w, wt, b)
            })
            .collect();
        let head = Dense::new(&mut store, "rel.head", h + 3 * config.filters, 3, Activation::Identity, &mut rng);
        Ok(RelModel {
            config: config.clone(),
            vocab,
            store,
            encoder,
            convs,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Class logits, `1 x 3`.
    fn logits(&self, g: &mut Graph, inst: &RelationInstance) -> Result<Var> {
        let len = inst.context.len();
        let out = transformer_encode(g, &inst.context, &inst.segments, &vec![true; len], &self.encoder)?;
        let seq = g.dropout(out.sequence, self.config.encoder_dropout)?;
        let mut parts = vec![out.pooled];
        for &(w, wt, b) in &self.convs {
            let pad = w.saturating_sub(len);
            let windows = g.unfold(seq, len, w, 0, pad)?;
            let n = g.shape(windows).0;
            let (wt, b) = (g.param(wt), g.param(b));
            let conv = g.matmul(windows, wt)?;
            let conv = g.add_row(conv, b)?;
            let conv = g.relu(conv);
            parts.push(g.max_rows(conv, n)?);
        }
        let x = g.concat_cols(&parts)?;
        let x = g.dropout(x, self.config.head_dropout)?;
        self.head.forward(g, x)
    }

    /// Class probabilities in `Relation::ALL` order.
    pub fn probabilities(&self, inst: &RelationInstance) -> Result<[f64; 3]> {
        let mut g = Graph::new(&self.store, false, 0);
        let l = self.logits(&mut g, inst)?;
        let p = softmax(g.value(l).data());
        Ok([p[0], p[1], p[2]])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({"kind": "rel", "config": self.config, "vocab": self.vocab});
        Checkpoint::from_store(meta, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some("rel") {
            return Err(Error::Checkpoint("not a relation checkpoint".into()));
        }
        let field = |name: &str| {
            ck.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        let config: RelConfig = serde_json::from_value(field("config")?)?;
        let mut vocab: Vocab = serde_json::from_value(field("vocab")?)?;
        vocab.reindex();
        let mut m = RelModel::new(&config, vocab)?;
        m.store.load_values(ck.tensor_refs())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path, DType::F64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Argmax class and the probability vector. Equal probabilities resolve to
/// the earlier class in `AFTER < OVERLAP < BEFORE`.
pub fn classify_relation(model: &RelModel, inst: &RelationInstance) -> Result<(Relation, [f64; 3])> {
    let p = model.probabilities(inst)?;
    let best = (1..3).fold(0, |b, k| if p[k] > p[b] { k } else { b });
    Ok((Relation::ALL[best], p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

/// Labelled fraction classified correctly.
pub fn accuracy(model: &RelModel, instances: &[RelationInstance]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for inst in instances {
        if let Some(gold) = inst.label {
            correct += usize::from(classify_relation(model, inst)?.0 == gold);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Cross-entropy training for `config.epochs` epochs; loss is the mean per
/// instance.
pub fn train_rel(
    config: &RelConfig,
    vocab: Vocab,
    train: &[RelationInstance],
    val: &[RelationInstance],
) -> Result<(RelModel, Vec<RelEpoch>)> {
    let mut model = RelModel::new(config, vocab)?;
    if train.is_empty() {
        return Err(Error::Invalid("no training instances".into()));
    }
    let targets: Vec<usize> = train
        .iter()
        .map(|i| {
            i.label
                .map(Relation::index)
                .ok_or_else(|| Error::Invalid(format!("unlabeled instance in {}", i.doc_id)))
        })
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(config.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut graph_seed = config.seed.wrapping_mul(0x2545_f491_4f6c_dd1d);
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = ParamGrads::zeros_like(&model.store);
            for &i in batch {
                graph_seed = graph_seed.wrapping_add(1);
                let mut g = Graph::new(&model.store, true, graph_seed);
                let logits = model.logits(&mut g, &train[i])?;
                let row = g.value(logits).data();
                let pred = (1..3).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                correct += usize::from(pred == targets[i]);
                let loss = g.softmax_cross_entropy(logits, &[targets[i]])?;
                let lv = g.value(loss).as_scalar();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {batch_no}")));
                }
                loss_sum += lv;
                grads.accumulate(&g.backward(loss)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = config.optimizer.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            opt.step(&mut model.store, &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batch_no}: {e}")))?;
        }
        let val_acc = if val.is_empty() { None } else { Some(accuracy(&model, val)?) };
        let rec = RelEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        };
        log::info!("rel epoch {epoch}: loss {:.4} acc {:.3}", rec.train_loss, rec.train_acc);
        history.push(rec);
    }
    Ok((model, history))
}

const TRIGGERS: [(Relation, [&str; 2]); 3] = [
    (Relation::After, ["after", "following"]),
    (Relation::Overlap, ["during", "throughout"]),
    (Relation::Before, ["before", "until"]),
];
const FILLER: [&str; 8] = ["the", "patient", "was", "noted", "on", "and", "her", "course"];
const DRUGS: [&str; 5] = ["aspirin", "heparin", "insulin", "lasix", "coumadin"];
const MONTH_NAMES: [&str; 6] = ["January", "March", "May", "June", "August", "October"];

/// One-sentence documents whose relation is given by a trigger word between
/// the medication and the date; `n_per_class` documents per class.
pub fn separable_documents(n_per_class: usize, seed: u64) -> Vec<AnnotatedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for k in 0..n_per_class {
        for (rel, words) in TRIGGERS {
            let mut pre: Vec<&str> = (0..rng.gen_range(1..4)).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect();
            let drug = DRUGS[rng.gen_range(0..DRUGS.len())];
            let trigger = words[rng.gen_range(0..2)];
            let date = format!("{} {}", MONTH_NAMES[rng.gen_range(0..MONTH_NAMES.len())], rng.gen_range(2010..2022));
            let post: Vec<&str> = (0..rng.gen_range(0..3)).map(|_| FILLER[rng.gen_range(0..FILLER.len())]).collect();
            pre.push(drug);
            let text = format!("{} {trigger} {date} {} .", pre.join(" "), post.join(" "));
            let mut doc = AnnotatedDocument::from_text(format!("sep{}{k}", rel.as_str().to_lowercase()), text);
            let e = doc.tokens.iter().position(|t| t.text == drug).expect("drug token");
            let t = find_date_spans(&doc).into_iter().next().expect("date span");
            doc.events.insert(
                "E0".into(),
                EntitySpan {
                    tag: "TREATMENT".into(),
                    start: e,
                    end: e,
                    surface: drug.into(),
                },
            );
            doc.timexes.insert("T0".into(), t);
            doc.tlinks.push(TLink {
                source: "E0".into(),
                target: "T0".into(),
                relation: rel,
            });
            docs.push(doc);
        }
    }
    docs
}

/// Labelled instances for [`separable_documents`] with a shared vocabulary.
pub fn separable_instances(docs: &[AnnotatedDocument], vocab: &Vocab) -> Vec<RelationInstance> {
    docs.iter()
        .flat_map(|d| gold_candidates(d, vocab, &CandidateOptions::default()).0)
        .collect()
}

/// Desk configuration that fits the separable fixture.
pub fn fixture_config(seed: u64) -> RelConfig {
    RelConfig {
        epochs: 30,
        n_per_class: 20,
        seed,
        ..RelConfig::default()
    }
}

/// Histogram of gold labels.
pub fn label_counts(instances: &[RelationInstance]) -> HashMap<Relation, usize> {
    let mut m = HashMap::new();
    for l in instances.iter().filter_map(|i| i.label) {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

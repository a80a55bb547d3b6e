//! Self-checks run by `medtem verify`.
//!
//! Every suite compares the library against an independent reference:
//! brute-force CRF enumeration, central finite differences, a restated
//! copy of the status rules, hand-computed metrics and an IOB table. The
//! report contains no timings, so repeated runs print identical text.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{iob_to_spans, spans_to_iob, AnnotatedDocument, EntitySpan, Relation, TagScheme};
use crate::crf;
use crate::error::Result;
use crate::evalkit::{confusion_counts, report};
use crate::layers::{
    bilstm, char_cnn, lstm_cell_step, transformer_encode, Activation, CharCnn, Dense, EncoderConfig, EncoderParams, LstmParams,
};
use crate::medstatus::{medication_status, AnchorDates, DateMention, DatedRelation, UseStatus};
use crate::numcore::{grad_check, Graph, ParamId, ParamStore, Tensor, Var};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const CRF_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let status = if s.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {:<12} checks={:<5} {}", s.name, s.checks, s.detail);
        }
        let failed = self.suites.iter().filter(|s| !s.passed).count();
        let _ = writeln!(out, "{} suites, {} failed", self.suites.len(), failed);
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Random CRF instances (`L <= 6`, `T <= 4`). Every fourth instance uses
/// small integer scores so that Viterbi ties are exercised.
pub fn crf_oracle_suite(n: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut mismatches = 0;
    for i in 0..n {
        let l = rng.gen_range(1..=6);
        let t = rng.gen_range(1..=4);
        let ties = i % 4 == 3;
        let draw = |rng: &mut ChaCha8Rng| {
            if ties {
                rng.gen_range(-1..=1) as f64
            } else {
                rng.gen_range(-2.0..2.0)
            }
        };
        let em = Tensor::matrix(l, t, (0..l * t).map(|_| draw(&mut rng)).collect())?;
        let tr = crf::masked_transitions(t, || draw(&mut rng));
        let log_z = crf::log_partition(&em, &tr)?;
        max_err = max_err.max((log_z - crf::oracle::log_partition(&em, &tr)).abs());
        let (path, score) = crf::viterbi(&em, &tr)?;
        let (best, best_score) = crf::oracle::best_path(&em, &tr);
        if path != best || (score - best_score).abs() > CRF_TOLERANCE {
            mismatches += 1;
        }
    }
    Ok(SuiteResult {
        name: "crf_oracle".into(),
        passed: max_err <= CRF_TOLERANCE && mismatches == 0,
        checks: n,
        detail: format!("max |logZ - enumeration| = {max_err:.3e}, viterbi mismatches = {mismatches}"),
    })
}

/// The two-token, two-tag instance whose four path scores are
/// 4.5, 4.5, 6 and 6.
pub fn derived_crf_instance() -> (Tensor, Tensor) {
    let em = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).expect("shape");
    let mut tr = Tensor::zeros(4, 4);
    tr.set(0, 0, 0.5);
    tr.set(0, 1, -0.5);
    tr.set(1, 0, 1.0);
    (em, tr)
}

pub fn crf_derived_suite() -> Result<SuiteResult> {
    let (em, tr) = derived_crf_instance();
    let log_z = crf::log_partition(&em, &tr)?;
    let closed = 2f64.ln() + 6.0 + (1.0 + (-1.5f64).exp()).ln();
    let (path, score) = crf::viterbi(&em, &tr)?;
    let passed = (log_z - closed).abs() < CRF_TOLERANCE && path == [1, 0] && (score - 6.0).abs() < CRF_TOLERANCE;
    Ok(SuiteResult {
        name: "crf_derived".into(),
        passed,
        checks: 3,
        detail: format!("logZ = {log_z:.6} (closed form {closed:.6}), viterbi {path:?} score {score:.1}"),
    })
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            if v.is_finite() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

/// `sum(x * r)` for a constant random `r`, so that every output element
/// receives a distinct upstream gradient.
fn readout(g: &mut Graph, x: Var, r: &Tensor) -> Result<Var> {
    let rv = g.input(r.clone());
    let p = g.mul(x, rv)?;
    Ok(g.sum_all(p))
}

fn readout_for(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0)
}

const FD_EPS: f64 = 1e-5;

fn gc_lstm_cell(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = LstmParams::new(&mut store, "cell", 3, 4, &mut rng);
    let x = store.add("x", Tensor::zeros(1, 3), true);
    let h = store.add("h", Tensor::zeros(1, 4), true);
    let c = store.add("c", Tensor::zeros(1, 4), true);
    randomize(&mut store, &mut rng, 0.8);
    let (r1, r2) = (readout_for(&mut rng, 1, 4), readout_for(&mut rng, 1, 4));
    let rep = grad_check(&mut store, FD_EPS, |g| {
        let (xv, hv, cv) = (g.param(x), g.param(h), g.param(c));
        let (h1, c1) = lstm_cell_step(g, xv, hv, cv, &p)?;
        let a = readout(g, h1, &r1)?;
        let b = readout(g, c1, &r2)?;
        g.add(a, b)
    })?;
    Ok(rep.max_rel_error)
}

fn gc_bilstm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let fwd = LstmParams::new(&mut store, "fwd", 3, 2, &mut rng);
    let bwd = LstmParams::new(&mut store, "bwd", 3, 2, &mut rng);
    let seq = store.add("seq", Tensor::zeros(4, 3), true);
    randomize(&mut store, &mut rng, 0.8);
    let r = readout_for(&mut rng, 4, 4);
    let rep = grad_check(&mut store, FD_EPS, |g| {
        let s = g.param(seq);
        let out = bilstm(g, s, &fwd, &bwd, 0.0)?;
        readout(g, out, &r)
    })?;
    Ok(rep.max_rel_error)
}

fn gc_char_cnn(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = CharCnn::new(&mut store, "cnn", 3, 3, 4, Activation::Tanh, &mut rng);
    let chars = store.add("chars", Tensor::zeros(10, 3), true);
    randomize(&mut store, &mut rng, 0.8);
    let r = readout_for(&mut rng, 2, 4);
    let rep = grad_check(&mut store, FD_EPS, |g| {
        let e = g.param(chars);
        let out = char_cnn(g, e, 5, &p)?;
        readout(g, out, &r)
    })?;
    Ok(rep.max_rel_error)
}

fn gc_dense(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let act = [Activation::Tanh, Activation::Softmax, Activation::Identity][seed as usize % 3];
    let d = Dense::new(&mut store, "dense", 4, 3, act, &mut rng);
    let x = store.add("x", Tensor::zeros(2, 4), true);
    randomize(&mut store, &mut rng, 0.8);
    let r = readout_for(&mut rng, 2, 3);
    let rep = grad_check(&mut store, FD_EPS, |g| {
        let xv = g.param(x);
        let out = d.forward(g, xv)?;
        readout(g, out, &r)
    })?;
    Ok(rep.max_rel_error)
}

/// The key bias only shifts each score row by `q.b`, which softmax
/// ignores; it is excluded from finite differences and its analytic
/// gradient must vanish instead.
fn gc_attention(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        vocab_size: 7,
        hidden: 4,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 6,
        max_len: 6,
        n_segments: 2,
    };
    let p = EncoderParams::new(&mut store, "enc", cfg, &mut rng)?;
    randomize(&mut store, &mut rng, 0.8);
    let key_bias = store.lookup("enc.layer0.k.b").expect("key bias");
    store.set_trainable(key_bias, false);
    let ids: Vec<usize> = (0..5).map(|_| rng.gen_range(1..7)).collect();
    let segs = [0, 0, 1, 1, 1];
    let mask = [true, true, true, false, true];
    let (r_seq, r_pool) = (readout_for(&mut rng, 5, 4), readout_for(&mut rng, 1, 4));
    let loss = |g: &mut Graph| -> Result<Var> {
        let out = transformer_encode(g, &ids, &segs, &mask, &p)?;
        let a = readout(g, out.sequence, &r_seq)?;
        let b = readout(g, out.pooled, &r_pool)?;
        g.add(a, b)
    };
    let rep = grad_check(&mut store, FD_EPS, loss)?;
    store.set_trainable(key_bias, true);
    let mut g = Graph::new(&store, false, 0);
    let l = loss(&mut g)?;
    let grads = g.backward(l)?;
    let bias_grad = grads.get(key_bias).map_or(0.0, |v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    Ok(if bias_grad < 1e-12 { rep.max_rel_error } else { f64::INFINITY })
}

fn gc_crf_nll(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, t) = (4, 3);
    let mut store = ParamStore::new();
    let em = store.add("emissions", uniform(&mut rng, l, t, 1.5), true);
    let tr = store.add("transitions", crf::masked_transitions(t, || rng.gen_range(-1.0..1.0)), true);
    let gold: Vec<usize> = (0..l).map(|_| rng.gen_range(0..t)).collect();
    let rep = grad_check(&mut store, FD_EPS, |g| {
        let e = g.params().get(em).clone();
        let tt = g.params().get(tr).clone();
        let n = crf::nll(&e, &tt, &gold)?;
        let ev = g.param(em);
        let tv = g.param(tr);
        g.scalar_fn(vec![ev, tv], n.loss, vec![n.d_emissions.into_data(), n.d_transitions.into_data()])
    })?;
    Ok(rep.max_rel_error)
}

pub const GRAD_LAYERS: [&str; 6] = ["lstm_cell", "bilstm", "char_cnn", "dense", "attention", "crf_nll"];

/// Finite-difference checks for every differentiable layer, `n_seeds`
/// random instances each.
pub fn grad_check_suite(n_seeds: u64, seed: u64) -> Result<SuiteResult> {
    let checks: [fn(u64) -> Result<f64>; 6] = [gc_lstm_cell, gc_bilstm, gc_char_cnn, gc_dense, gc_attention, gc_crf_nll];
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, check) in GRAD_LAYERS.iter().zip(checks) {
        let mut worst = 0.0f64;
        for s in 0..n_seeds {
            worst = worst.max(check(seed.wrapping_mul(1000).wrapping_add(s))?);
        }
        passed &= worst < GRAD_TOLERANCE;
        parts.push(format!("{name}={worst:.2e}"));
    }
    Ok(SuiteResult {
        name: "grad_check".into(),
        passed,
        checks: GRAD_LAYERS.len() * n_seeds as usize,
        detail: format!("max rel error {}", parts.join(" ")),
    })
}

/// The status rules restated over relation labels alone (date REL
/// medication): 1. AFTER admission and BEFORE/OVERLAP discharge; 2. OVERLAP
/// both anchors; 3. OVERLAP an intermediate date and BEFORE/OVERLAP
/// discharge; 4. otherwise not in use.
pub fn rule_oracle(adm: Relation, dis: Relation, mid: Option<Relation>) -> bool {
    use Relation::*;
    let dis_ok = dis == Before || dis == Overlap;
    (adm == After && dis_ok) || (adm == Overlap && dis == Overlap) || (mid == Some(Overlap) && dis_ok)
}

fn date(surface: &str, pos: usize) -> DateMention {
    DateMention::new(EntitySpan {
        tag: "DATE".into(),
        start: pos,
        end: pos,
        surface: surface.into(),
    })
}

fn rule_case(adm: Relation, dis: Relation, mid: Option<Relation>) -> bool {
    let anchors = AnchorDates {
        admission: Some(date("03/02/2020", 3)),
        discharge: Some(date("03/15/2020", 8)),
    };
    let mut rels = vec![
        DatedRelation {
            date: date("03/02/2020", 3),
            relation: adm,
        },
        DatedRelation {
            date: date("03/15/2020", 8),
            relation: dis,
        },
    ];
    if let Some(r) = mid {
        rels.push(DatedRelation {
            date: date("03/09/2020", 20),
            relation: r,
        });
    }
    medication_status(&rels, &anchors).status == UseStatus::InUse
}

pub fn rule_table_suite() -> SuiteResult {
    use Relation::*;
    let mut mismatches = Vec::new();
    let mut checks = 0;
    for adm in Relation::ALL {
        for dis in Relation::ALL {
            for mid in [None, Some(After), Some(Overlap), Some(Before)] {
                checks += 1;
                if rule_case(adm, dis, mid) != rule_oracle(adm, dis, mid) {
                    mismatches.push(format!("{adm}/{dis}/{mid:?}"));
                }
            }
        }
    }
    let quoted = [(After, Before, true), (Overlap, Overlap, true), (Before, After, false)];
    for (adm, dis, on) in quoted {
        checks += 1;
        if rule_case(adm, dis, None) != on {
            mismatches.push(format!("quoted {adm}/{dis}"));
        }
    }
    SuiteResult {
        name: "rule_table".into(),
        passed: mismatches.is_empty(),
        checks,
        detail: if mismatches.is_empty() {
            "36 enumerated + 3 quoted cases agree".into()
        } else {
            format!("mismatches: {}", mismatches.join(", "))
        },
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn metrics_suite(n_random: usize, seed: u64) -> Result<SuiteResult> {
    let labels = strings(&["A", "B"]);
    let c = confusion_counts(&strings(&["A", "A", "B", "B"]), &strings(&["A", "B", "B", "B"]), &labels, false)?;
    let r = report(&c);
    let a = &r.per_label[0];
    let hand_ok = a.precision == 1.0 && a.recall == 0.5 && a.f1 == 2.0 / 3.0 && (r.macro_avg.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12;
    let mut failures = usize::from(!hand_ok);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = strings(&["L0", "L1", "L2", "L3", "L4"]);
    let mut max_gap = 0.0f64;
    for _ in 0..n_random {
        let k = rng.gen_range(2..=5);
        let support = rng.gen_range(1..=8);
        let labels = &names[..k];
        let mut gold: Vec<String> = labels.iter().flat_map(|l| std::iter::repeat_n(l.clone(), support)).collect();
        gold.shuffle(&mut rng);
        let pred: Vec<String> = gold.iter().map(|_| labels[rng.gen_range(0..k)].clone()).collect();
        let r = report(&confusion_counts(&gold, &pred, labels, false)?);
        let gap = [
            r.macro_avg.precision - r.weighted_avg.precision,
            r.macro_avg.recall - r.weighted_avg.recall,
            r.macro_avg.f1 - r.weighted_avg.f1,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
        max_gap = max_gap.max(gap);
        if gap > 1e-12 {
            failures += 1;
        }
    }
    Ok(SuiteResult {
        name: "metrics".into(),
        passed: failures == 0,
        checks: 1 + n_random,
        detail: format!(
            "hand example P(A)={} R(A)={} F1(A)={:.4} macro F1={:.4}; max |macro - weighted| = {max_gap:.1e}",
            a.precision, a.recall, a.f1, r.macro_avg.f1
        ),
    })
}

type Chunk = (&'static str, usize, usize);

/// Orphan `I-` labels paired with the chunks they must decode to
/// (`tag`, first token, last token).
pub const ORPHAN_TABLE: [(&str, &[Chunk]); 20] = [
    ("I-m", &[("m", 0, 0)]),
    ("O I-m", &[("m", 1, 1)]),
    ("I-m I-m", &[("m", 0, 1)]),
    ("B-do I-m", &[("do", 0, 0), ("m", 1, 1)]),
    ("O I-m I-m O", &[("m", 1, 2)]),
    ("B-m O I-m", &[("m", 0, 0), ("m", 2, 2)]),
    ("I-do B-do", &[("do", 0, 0), ("do", 1, 1)]),
    ("I-m I-do", &[("m", 0, 0), ("do", 1, 1)]),
    ("B-m I-m I-do I-do", &[("m", 0, 1), ("do", 2, 3)]),
    ("O O O", &[]),
    ("B-m I-m", &[("m", 0, 1)]),
    ("I-m B-m I-m", &[("m", 0, 0), ("m", 1, 2)]),
    ("B-m I-do I-m", &[("m", 0, 0), ("do", 1, 1), ("m", 2, 2)]),
    ("I-f O I-f", &[("f", 0, 0), ("f", 2, 2)]),
    ("B-m B-m", &[("m", 0, 0), ("m", 1, 1)]),
    ("O I-du I-du I-du", &[("du", 1, 3)]),
    ("I-r I-m I-r", &[("r", 0, 0), ("m", 1, 1), ("r", 2, 2)]),
    ("B-mo I-mo O I-mo I-mo", &[("mo", 0, 1), ("mo", 3, 4)]),
    ("PAD I-m", &[("m", 1, 1)]),
    ("I-m PAD I-m", &[("m", 0, 0), ("m", 2, 2)]),
];

fn random_iob(rng: &mut ChaCha8Rng, tags: &[String]) -> Vec<String> {
    let len = rng.gen_range(1..=12);
    let mut out: Vec<String> = Vec::with_capacity(len);
    for _ in 0..len {
        let open = out
            .last()
            .and_then(|l: &String| l.get(2..).filter(|_| l != "O").map(str::to_string));
        let label = match (rng.gen_range(0..3), open) {
            (0, _) => "O".to_string(),
            (1, Some(tag)) => format!("I-{tag}"),
            _ => format!("B-{}", tags[rng.gen_range(0..tags.len())]),
        };
        out.push(label);
    }
    out
}

/// Labels -> spans -> document -> labels, over one sentence of
/// punctuation-free tokens.
fn iob_round_trip(labels: &[String], scheme: &TagScheme) -> Result<bool> {
    let tokens: Vec<String> = (0..labels.len()).map(|i| format!("w{i}")).collect();
    let mut doc = AnnotatedDocument::from_text("iob", tokens.join(" "));
    doc.entities = iob_to_spans(&tokens, labels);
    let (sents, _) = spans_to_iob(&doc, scheme)?;
    Ok(sents.len() == 1 && sents[0].labels == labels)
}

pub fn iob_suite(n: usize, seed: u64) -> Result<SuiteResult> {
    let scheme = TagScheme::medication();
    let tags = scheme.base_tags().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trip_failures = 0;
    for _ in 0..n {
        if !iob_round_trip(&random_iob(&mut rng, &tags), &scheme)? {
            trip_failures += 1;
        }
    }
    let mut orphan_failures = 0;
    for (labels, expected) in ORPHAN_TABLE {
        let labels = strings(&labels.split(' ').collect::<Vec<_>>());
        let tokens: Vec<String> = (0..labels.len()).map(|i| format!("w{i}")).collect();
        let got: Vec<(String, usize, usize)> = iob_to_spans(&tokens, &labels)
            .into_iter()
            .map(|s| (s.tag, s.start, s.end))
            .collect();
        let want: Vec<(String, usize, usize)> = expected.iter().map(|&(t, a, b)| (t.to_string(), a, b)).collect();
        if got != want {
            orphan_failures += 1;
        }
    }
    Ok(SuiteResult {
        name: "iob".into(),
        passed: trip_failures == 0 && orphan_failures == 0,
        checks: n + ORPHAN_TABLE.len(),
        detail: format!(
            "round-trip failures {trip_failures}/{n}, orphan table failures {orphan_failures}/{}",
            ORPHAN_TABLE.len()
        ),
    })
}

pub fn run_all(seed: u64) -> Result<VerifyReport> {
    Ok(VerifyReport {
        suites: vec![
            crf_oracle_suite(200, seed)?,
            crf_derived_suite()?,
            grad_check_suite(5, seed)?,
            rule_table_suite(),
            metrics_suite(100, seed)?,
            iob_suite(1000, seed)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let r = run_all(0).unwrap();
        assert!(r.all_passed(), "{}", r.to_text());
        assert_eq!(r.suites.len(), 6);
    }

    #[test]
    fn report_is_deterministic() {
        assert_eq!(run_all(3).unwrap().to_text(), run_all(3).unwrap().to_text());
    }

    #[test]
    fn rule_oracle_quoted_cases() {
        use Relation::*;
        assert!(rule_oracle(After, Before, None));
        assert!(rule_oracle(Overlap, Overlap, None));
        assert!(!rule_oracle(Before, After, None));
        assert!(!rule_oracle(After, After, Some(Overlap)));
    }

    #[test]
    fn failing_suite_is_reported() {
        let r = VerifyReport {
            suites: vec![SuiteResult {
                name: "x".into(),
                passed: false,
                checks: 1,
                detail: String::new(),
            }],
        };
        assert!(!r.all_passed());
        assert!(r.to_text().starts_with("FAIL x"));
    }
}

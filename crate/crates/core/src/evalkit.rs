//! Exact-match scoring: per-label precision/recall/F1 with support,
//! accuracy, macro and weighted averages, and span-level scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{iob_to_spans, EntitySpan, TagScheme};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Counts>,
    pub correct: usize,
    pub total: usize,
    pub padding_included: bool,
}

/// Token-level counts. Positions whose gold label is `PAD` are skipped
/// unless `include_padding`; in that mode `PAD` is scored like any label.
/// Labels seen in the data but missing from `labels` are appended in order
/// of first appearance.
pub fn confusion_counts(gold: &[String], pred: &[String], labels: &[String], include_padding: bool) -> Result<Confusion> {
    if gold.len() != pred.len() {
        return Err(Error::Shape {
            op: "confusion_counts",
            left: vec![gold.len()],
            right: vec![pred.len()],
        });
    }
    let mut labels: Vec<String> = labels
        .iter()
        .filter(|l| include_padding || l.as_str() != TagScheme::PAD)
        .cloned()
        .collect();
    let mut index: BTreeMap<String, usize> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let mut counts = vec![Counts::default(); labels.len()];
    let mut slot = |l: &str, labels: &mut Vec<String>, counts: &mut Vec<Counts>| -> Option<usize> {
        if !include_padding && l == TagScheme::PAD {
            return None;
        }
        Some(*index.entry(l.to_string()).or_insert_with(|| {
            labels.push(l.to_string());
            counts.push(Counts::default());
            labels.len() - 1
        }))
    };
    let (mut correct, mut total) = (0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if !include_padding && g == TagScheme::PAD {
            continue;
        }
        total += 1;
        let gi = slot(g, &mut labels, &mut counts);
        if g == p {
            correct += 1;
            if let Some(i) = gi {
                counts[i].tp += 1;
            }
            continue;
        }
        if let Some(i) = gi {
            counts[i].fn_ += 1;
        }
        if let Some(i) = slot(p, &mut labels, &mut counts) {
            counts[i].fp += 1;
        }
    }
    Ok(Confusion {
        labels,
        counts,
        correct,
        total,
        padding_included: include_padding,
    })
}

/// Precision, recall and F1 with `0/0 = 0`.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl LabelMetrics {
    pub fn from_counts(label: &str, c: Counts) -> Self {
        let (precision, recall, f1) = prf(c.tp, c.fp, c.fn_);
        LabelMetrics {
            label: label.to_string(),
            precision,
            recall,
            f1,
            support: c.support(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_label: Vec<LabelMetrics>,
    pub accuracy: f64,
    pub macro_avg: Prf,
    pub weighted_avg: Prf,
    pub total_support: usize,
    pub padding_included: bool,
}

/// Unweighted and support-weighted means over `per_label`.
pub fn aggregate(per_label: Vec<LabelMetrics>, correct: usize, total: usize, padding_included: bool) -> EvalReport {
    let n = per_label.len() as f64;
    let support: usize = per_label.iter().map(|m| m.support).sum();
    let mean = |f: fn(&LabelMetrics) -> f64| if n == 0.0 { 0.0 } else { per_label.iter().map(f).sum::<f64>() / n };
    let weighted = |f: fn(&LabelMetrics) -> f64| {
        if support == 0 {
            0.0
        } else {
            per_label.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / support as f64
        }
    };
    let macro_avg = Prf {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let weighted_avg = Prf {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_label,
        macro_avg,
        weighted_avg,
        total_support: support,
        padding_included,
    }
}

/// Report over labels that occur in gold or predictions.
pub fn report(confusion: &Confusion) -> EvalReport {
    let per_label = confusion
        .labels
        .iter()
        .zip(&confusion.counts)
        .filter(|(_, c)| c.tp + c.fp + c.fn_ > 0)
        .map(|(l, c)| LabelMetrics::from_counts(l, *c))
        .collect();
    aggregate(per_label, confusion.correct, confusion.total, confusion.padding_included)
}

/// Token-level report over aligned label sequences.
pub fn evaluate(gold: &[Vec<String>], pred: &[Vec<String>], labels: &[String], include_padding: bool) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Shape {
            op: "evaluate",
            left: vec![gold.len()],
            right: vec![pred.len()],
        });
    }
    let mut g = Vec::new();
    let mut p = Vec::new();
    for (gs, ps) in gold.iter().zip(pred) {
        if gs.len() != ps.len() {
            return Err(Error::Shape {
                op: "evaluate",
                left: vec![gs.len()],
                right: vec![ps.len()],
            });
        }
        g.extend(gs.iter().cloned());
        p.extend(ps.iter().cloned());
    }
    Ok(report(&confusion_counts(&g, &p, labels, include_padding)?))
}

impl EvalReport {
    /// Aligned text table with metrics scaled by 100 when `percent`.
    pub fn to_table(&self, percent: bool) -> String {
        let k = if percent { 100.0 } else { 1.0 };
        let width = self.per_label.iter().map(|m| m.label.len()).max().unwrap_or(0).max(12);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "precision", "recall", "f1-score", "support"
        );
        let _ = writeln!(out);
        for m in &self.per_label {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                m.label,
                m.precision * k,
                m.recall * k,
                m.f1 * k,
                m.support
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>width$}  {:>9}  {:>9}  {:>9.2}  {:>9}",
            "accuracy",
            "",
            "",
            self.accuracy * k,
            self.total_support
        );
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:>width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                name,
                a.precision * k,
                a.recall * k,
                a.f1 * k,
                self.total_support
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn label(&self, name: &str) -> Option<&LabelMetrics> {
        self.per_label.iter().find(|m| m.label == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub per_tag: BTreeMap<String, (Counts, Prf)>,
    pub overall: (Counts, Prf),
}

fn with_prf(c: Counts) -> (Counts, Prf) {
    let (precision, recall, f1) = prf(c.tp, c.fp, c.fn_);
    (c, Prf { precision, recall, f1 })
}

/// A predicted span scores only if a not-yet-matched gold span has the same
/// tag, start and end.
pub fn span_prf(gold: &[EntitySpan], pred: &[EntitySpan]) -> SpanReport {
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    let mut unmatched: BTreeMap<(&str, usize, usize), usize> = BTreeMap::new();
    for g in gold {
        *unmatched.entry((g.tag.as_str(), g.start, g.end)).or_default() += 1;
        counts.entry(g.tag.clone()).or_default().fn_ += 1;
    }
    for p in pred {
        let c = counts.entry(p.tag.clone()).or_default();
        match unmatched.get_mut(&(p.tag.as_str(), p.start, p.end)) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
                c.fn_ -= 1;
            }
            _ => c.fp += 1,
        }
    }
    let mut total = Counts::default();
    for c in counts.values() {
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    SpanReport {
        per_tag: counts.into_iter().map(|(t, c)| (t, with_prf(c))).collect(),
        overall: with_prf(total),
    }
}

/// Span scores over label sequences, decoding each sentence separately.
pub fn span_prf_sequences(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<SpanReport> {
    if gold.len() != pred.len() {
        return Err(Error::Shape {
            op: "span_prf_sequences",
            left: vec![gold.len()],
            right: vec![pred.len()],
        });
    }
    let (mut gs, mut ps) = (Vec::new(), Vec::new());
    let mut offset = 0;
    for (g, p) in gold.iter().zip(pred) {
        let shift = |mut s: EntitySpan| {
            s.start += offset;
            s.end += offset;
            s
        };
        gs.extend(iob_to_spans(&[], g).into_iter().map(shift));
        ps.extend(iob_to_spans(&[], p).into_iter().map(shift));
        offset += g.len().max(p.len());
    }
    Ok(span_prf(&gs, &ps))
}

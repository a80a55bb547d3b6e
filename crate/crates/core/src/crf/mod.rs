//! Exact linear-chain CRF over `T` tags with virtual START/STOP states.
//!
//! Transition matrices are `(T + 2) x (T + 2)`: index `T` is START and
//! `T + 1` is STOP. Entries into START and out of STOP are `-inf`. Emissions
//! are `L x T` matrices for a single unpadded sequence; padding never reaches
//! this module.

pub mod oracle;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub fn start_index(num_tags: usize) -> usize {
    num_tags
}

pub fn stop_index(num_tags: usize) -> usize {
    num_tags + 1
}

/// Fresh transition matrix with the START/STOP mask applied and every other
/// entry drawn from `init`.
pub fn masked_transitions(num_tags: usize, mut init: impl FnMut() -> f64) -> Tensor {
    let n = num_tags + 2;
    let mut t = Tensor::zeros(n, n);
    for from in 0..n {
        for to in 0..n {
            let v = if to == start_index(num_tags) || from == stop_index(num_tags) {
                f64::NEG_INFINITY
            } else {
                init()
            };
            t.set(from, to, v);
        }
    }
    t
}

/// Forbids IOB-inconsistent transitions (`O -> I-x`, `B-x -> I-y`,
/// `I-x -> I-y` for `x != y`, `START -> I-x`) by setting them to `-inf`.
/// `labels[i]` names tag `i`.
pub fn apply_iob_constraints(transitions: &mut Tensor, labels: &[String]) {
    let t = labels.len();
    for (to, label) in labels.iter().enumerate() {
        let Some(inner) = label.strip_prefix("I-") else { continue };
        transitions.set(start_index(t), to, f64::NEG_INFINITY);
        for (from, prev) in labels.iter().enumerate() {
            let prev_type = prev.strip_prefix("B-").or_else(|| prev.strip_prefix("I-"));
            if prev_type != Some(inner) {
                transitions.set(from, to, f64::NEG_INFINITY);
            }
        }
    }
}

fn dims(emissions: &Tensor, transitions: &Tensor) -> Result<(usize, usize)> {
    let (l, t) = (emissions.rows(), emissions.cols());
    if transitions.rows() != t + 2 || transitions.cols() != t + 2 {
        return Err(Error::Shape {
            op: "crf",
            left: emissions.shape().to_vec(),
            right: transitions.shape().to_vec(),
        });
    }
    if l == 0 {
        return Err(Error::Invalid("crf sequence must have at least one position".into()));
    }
    Ok((l, t))
}

fn check_tags(tags: &[usize], l: usize, t: usize) -> Result<()> {
    if tags.len() != l {
        return Err(Error::Shape {
            op: "crf tags",
            left: vec![l],
            right: vec![tags.len()],
        });
    }
    if let Some(&bad) = tags.iter().find(|&&x| x >= t) {
        return Err(Error::range("crf tag id", bad, t));
    }
    Ok(())
}

/// Unnormalised log score of one tag path.
pub fn score_sequence(emissions: &Tensor, transitions: &Tensor, tags: &[usize]) -> Result<f64> {
    let (l, t) = dims(emissions, transitions)?;
    check_tags(tags, l, t)?;
    let mut s = transitions.get(start_index(t), tags[0]);
    for (pos, &tag) in tags.iter().enumerate() {
        s += emissions.get(pos, tag);
        if pos > 0 {
            s += transitions.get(tags[pos - 1], tag);
        }
    }
    Ok(s + transitions.get(tags[l - 1], stop_index(t)))
}

fn lse(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Forward log-messages, `L x T`.
fn forward(emissions: &Tensor, transitions: &Tensor, l: usize, t: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; l * t];
    for (j, a) in alpha[..t].iter_mut().enumerate() {
        *a = transitions.get(start_index(t), j) + emissions.get(0, j);
    }
    for pos in 1..l {
        for j in 0..t {
            let prev = &alpha[(pos - 1) * t..pos * t];
            let v = lse((0..t).map(|i| prev[i] + transitions.get(i, j)));
            alpha[pos * t + j] = v + emissions.get(pos, j);
        }
    }
    alpha
}

fn backward(emissions: &Tensor, transitions: &Tensor, l: usize, t: usize) -> Vec<f64> {
    let mut beta = vec![0.0; l * t];
    for i in 0..t {
        beta[(l - 1) * t + i] = transitions.get(i, stop_index(t));
    }
    for pos in (0..l - 1).rev() {
        for i in 0..t {
            let next = &beta[(pos + 1) * t..(pos + 2) * t];
            beta[pos * t + i] = lse((0..t).map(|j| transitions.get(i, j) + emissions.get(pos + 1, j) + next[j]));
        }
    }
    beta
}

/// `log Z`: log-sum of exponentiated scores over all `T^L` paths.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let (l, t) = dims(emissions, transitions)?;
    let alpha = forward(emissions, transitions, l, t);
    let last = &alpha[(l - 1) * t..];
    Ok(lse((0..t).map(|j| last[j] + transitions.get(j, stop_index(t)))))
}

/// Posterior marginals from forward-backward.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub log_z: f64,
    /// `L x T` node marginals.
    pub node: Tensor,
    /// Expected transition counts, same layout as the transition matrix.
    pub transitions: Tensor,
}

pub fn marginals(emissions: &Tensor, transitions: &Tensor) -> Result<Marginals> {
    let (l, t) = dims(emissions, transitions)?;
    let alpha = forward(emissions, transitions, l, t);
    let beta = backward(emissions, transitions, l, t);
    let log_z = lse((0..t).map(|j| alpha[(l - 1) * t + j] + transitions.get(j, stop_index(t))));

    let mut node = Tensor::zeros(l, t);
    for pos in 0..l {
        for j in 0..t {
            node.set(pos, j, (alpha[pos * t + j] + beta[pos * t + j] - log_z).exp());
        }
    }
    let mut edge = Tensor::zeros(t + 2, t + 2);
    for j in 0..t {
        edge.set(start_index(t), j, node.get(0, j));
        edge.set(j, stop_index(t), node.get(l - 1, j));
    }
    for pos in 0..l - 1 {
        for i in 0..t {
            for j in 0..t {
                let lp = alpha[pos * t + i] + transitions.get(i, j) + emissions.get(pos + 1, j) + beta[(pos + 1) * t + j] - log_z;
                let cur = edge.get(i, j);
                edge.set(i, j, cur + lp.exp());
            }
        }
    }
    Ok(Marginals {
        log_z,
        node,
        transitions: edge,
    })
}

/// Negative log-likelihood of `gold` and its gradients.
#[derive(Clone, Debug)]
pub struct Nll {
    pub loss: f64,
    pub d_emissions: Tensor,
    pub d_transitions: Tensor,
}

pub fn nll(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<Nll> {
    let (l, t) = dims(emissions, transitions)?;
    check_tags(gold, l, t)?;
    let gold_score = score_sequence(emissions, transitions, gold)?;
    let Marginals {
        log_z,
        node: mut d_em,
        transitions: mut d_tr,
    } = marginals(emissions, transitions)?;
    for (pos, &tag) in gold.iter().enumerate() {
        let v = d_em.get(pos, tag);
        d_em.set(pos, tag, v - 1.0);
        let from = if pos == 0 { start_index(t) } else { gold[pos - 1] };
        let v = d_tr.get(from, tag);
        d_tr.set(from, tag, v - 1.0);
    }
    let v = d_tr.get(gold[l - 1], stop_index(t));
    d_tr.set(gold[l - 1], stop_index(t), v - 1.0);
    Ok(Nll {
        loss: (log_z - gold_score).max(0.0),
        d_emissions: d_em,
        d_transitions: d_tr,
    })
}

/// Highest-scoring path. On ties the smallest tag index wins at every
/// backtrace step, including the choice of the final tag.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (l, t) = dims(emissions, transitions)?;
    let mut delta = vec![0.0; l * t];
    let mut back = vec![0usize; l * t];
    for (j, d) in delta[..t].iter_mut().enumerate() {
        *d = transitions.get(start_index(t), j) + emissions.get(0, j);
    }
    for pos in 1..l {
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..t {
                let v = delta[(pos - 1) * t + i] + transitions.get(i, j);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            delta[pos * t + j] = best + emissions.get(pos, j);
            back[pos * t + j] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for j in 0..t {
        let v = delta[(l - 1) * t + j] + transitions.get(j, stop_index(t));
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![0; l];
    path[l - 1] = last;
    for pos in (1..l).rev() {
        path[pos - 1] = back[pos * t + path[pos]];
    }
    Ok((path, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, Graph, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_trans(t: usize) -> Tensor {
        masked_transitions(t, || 0.0)
    }

    /// The hand-worked two-tag instance.
    pub(crate) fn derived_instance() -> (Tensor, Tensor) {
        let em = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut tr = zero_trans(2);
        tr.set(0, 0, 0.5);
        tr.set(0, 1, -0.5);
        tr.set(1, 0, 1.0);
        tr.set(1, 1, 0.0);
        (em, tr)
    }

    #[test]
    fn score_examples() {
        let em = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(score_sequence(&em, &zero_trans(2), &[1, 1]).unwrap(), 6.0);
        let em1 = Tensor::from_rows(&[vec![5.0, 0.0]]).unwrap();
        assert_eq!(score_sequence(&em1, &zero_trans(2), &[0]).unwrap(), 5.0);
        let (em, tr) = derived_instance();
        assert_eq!(score_sequence(&em, &tr, &[1, 0]).unwrap(), 6.0);
        assert!(score_sequence(&em, &tr, &[1, 2]).is_err());
    }

    #[test]
    fn log_partition_examples() {
        let em = Tensor::zeros(2, 2);
        let z = log_partition(&em, &zero_trans(2)).unwrap();
        assert!((z - 4f64.ln()).abs() < 1e-12);

        let (em, tr) = derived_instance();
        let expected = (2.0 * 4.5f64.exp() + 2.0 * 6f64.exp()).ln();
        let z = log_partition(&em, &tr).unwrap();
        assert!((z - expected).abs() < 1e-12);
        assert!((z - 6.894560).abs() < 1e-6, "{z}");
    }

    #[test]
    fn viterbi_tie_break_prefers_smaller_index() {
        let (em, tr) = derived_instance();
        let (path, score) = viterbi(&em, &tr).unwrap();
        assert_eq!(score, 6.0);
        assert_eq!(path, vec![1, 0]);
    }

    #[test]
    fn viterbi_zero_transitions_is_rowwise_argmax() {
        let em = Tensor::from_rows(&[vec![0.1, 0.9, 0.3], vec![2.0, -1.0, 0.0], vec![0.0, 0.0, 5.0]]).unwrap();
        let (path, _) = viterbi(&em, &zero_trans(3)).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
    }

    #[test]
    fn nll_examples() {
        let em = Tensor::zeros(2, 2);
        let out = nll(&em, &zero_trans(2), &[0, 1]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);

        let gold = [1, 0, 2];
        let mut em = Tensor::filled(3, 3, -50.0);
        for (pos, &g) in gold.iter().enumerate() {
            em.set(pos, g, 50.0);
        }
        let out = nll(&em, &zero_trans(3), &gold).unwrap();
        assert!(out.loss < 1e-10, "{}", out.loss);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 3;
        let mut store = ParamStore::new();
        let em = store.add(
            "em",
            Tensor::matrix(3, t, (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
            true,
        );
        let tr = store.add("tr", masked_transitions(t, || rng.gen_range(-2.0..2.0)), true);
        let gold = vec![2, 0, 1];
        let report = grad_check(&mut store, 1e-5, |g: &mut Graph| {
            let (e, r) = (g.param(em), g.param(tr));
            let out = nll(g.value(e), g.value(r), &gold)?;
            g.scalar_fn(
                vec![e, r],
                out.loss,
                vec![out.d_emissions.into_data(), out.d_transitions.into_data()],
            )
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn iob_constraints_block_orphan_inside() {
        let labels: Vec<String> = ["O", "B-m", "I-m", "B-do", "I-do"].iter().map(|s| s.to_string()).collect();
        let mut tr = zero_trans(5);
        apply_iob_constraints(&mut tr, &labels);
        assert_eq!(tr.get(0, 2), f64::NEG_INFINITY);
        assert_eq!(tr.get(1, 2), 0.0);
        assert_eq!(tr.get(2, 2), 0.0);
        assert_eq!(tr.get(3, 2), f64::NEG_INFINITY);
        assert_eq!(tr.get(start_index(5), 4), f64::NEG_INFINITY);
        // Strongly preferring I-m everywhere still yields a well-formed path.
        let em = Tensor::from_rows(&[vec![0.0, 0.0, 5.0, 0.0, 0.0], vec![0.0, 0.0, 5.0, 0.0, 0.0]]).unwrap();
        let (path, _) = viterbi(&em, &tr).unwrap();
        assert_eq!(path, vec![1, 2]);
    }
}

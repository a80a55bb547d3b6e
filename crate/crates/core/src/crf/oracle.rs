//! Brute-force enumeration over all `T^L` tag paths.
//!
//! Deliberately naive: scores are recomputed from scratch for every path so
//! that the dynamic programs in the parent module can be checked against
//! something that shares none of their recursion.

use crate::numcore::Tensor;

fn path_score(emissions: &Tensor, transitions: &Tensor, path: &[usize]) -> f64 {
    let t = emissions.cols();
    let mut s = transitions.get(t, path[0]) + transitions.get(path[path.len() - 1], t + 1);
    for (pos, &tag) in path.iter().enumerate() {
        s += emissions.get(pos, tag);
    }
    for w in path.windows(2) {
        s += transitions.get(w[0], w[1]);
    }
    s
}

/// Every path in lexicographic order with its score.
pub fn enumerate(emissions: &Tensor, transitions: &Tensor) -> Vec<(Vec<usize>, f64)> {
    let (l, t) = (emissions.rows(), emissions.cols());
    let total = t.pow(l as u32);
    (0..total)
        .map(|mut code| {
            let mut path = vec![0; l];
            for pos in (0..l).rev() {
                path[pos] = code % t;
                code /= t;
            }
            let s = path_score(emissions, transitions, &path);
            (path, s)
        })
        .collect()
}

pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    let scores: Vec<f64> = enumerate(emissions, transitions).into_iter().map(|(_, s)| s).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Best path under the same tie-break as Viterbi backtracking: among
/// optimal paths prefer the smallest last tag, then the smallest
/// second-to-last, and so on.
pub fn best_path(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let all = enumerate(emissions, transitions);
    let max = all.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max.abs().max(1.0);
    let best = all
        .into_iter()
        .filter(|(_, s)| *s >= max - tol)
        .min_by(|(a, _), (b, _)| a.iter().rev().cmp(b.iter().rev()))
        .expect("at least one path");
    (best.0, max)
}

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `loss_fn` against central
/// differences for every finite trainable scalar in `store`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`. The closure must
/// build the same graph on every call; graphs are run in eval mode with a
/// fixed seed.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store, false, 0);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store, false, 0);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).as_scalar())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.get(id).len();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (i, &a) in grad.iter().enumerate() {
            let orig = store.get(id).data()[i];
            if !orig.is_finite() {
                continue;
            }
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{i}]", store.name(id));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::row(vec![0.3, -1.2, 2.5]), true);
        let report = grad_check(&mut store, 1e-5, |g| {
            let v = g.param(p);
            let sq = g.mul(v, v)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }
}

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }

    pub fn nadam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Nadam,
            ..Self::adam(lr)
        }
    }
}

/// Adam / Nadam with bias correction. Moment buffers are laid out per
/// parameter in store order and created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched, so a failed step leaves the store unchanged.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let OptimizerConfig {
            kind,
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc1_next = 1.0 - beta1.powi(t + 1);
        let bc2 = 1.0 - beta2.powi(t);

        for (id, g) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let v_hat = v[i] / bc2;
                let direction = match kind {
                    OptimizerKind::Adam => m[i] / bc1,
                    // Nesterov look-ahead: momentum term uses the next
                    // step's bias correction.
                    OptimizerKind::Nadam => beta1 * m[i] / bc1_next + (1.0 - beta1) * g[i] / bc1,
                };
                let update = lr * direction / (v_hat.sqrt() + eps);
                if p[i].is_finite() {
                    p[i] -= update;
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Graph, Tensor};

    fn one_param(value: f64, grad: f64) -> (ParamStore, ParamGrads) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(value), true);
        let mut g = Graph::new(&store, false, 0);
        let pv = g.param(id);
        let s = g.scale(pv, grad);
        let grads = g.backward(s).unwrap();
        (store, grads)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, grads) = one_param(3.0, 0.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(crate::numcore::ParamId(0)).as_scalar(), 3.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after one step, so the update is lr * g/|g|.
        let (mut store, grads) = one_param(1.0, 1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        opt.step(&mut store, &grads).unwrap();
        let p = store.get(crate::numcore::ParamId(0)).as_scalar();
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12, "{p}");
    }

    #[test]
    fn nadam_differs_from_adam_on_first_step() {
        let (mut a, grads) = one_param(1.0, 1.0);
        let mut b = a.clone();
        Optimizer::new(OptimizerConfig::adam(0.1)).step(&mut a, &grads).unwrap();
        Optimizer::new(OptimizerConfig::nadam(0.1)).step(&mut b, &grads).unwrap();
        let pa = a.get(crate::numcore::ParamId(0)).as_scalar();
        let pb = b.get(crate::numcore::ParamId(0)).as_scalar();
        // closed form: 0.9 * 0.1 / (1 - 0.81) + 0.1 / 0.1 = 0.47368.. + 1
        let expected = 1.0 - 0.1 * (0.09 / 0.19 + 1.0) / (1.0 + 1e-8);
        assert!((pb - expected).abs() < 1e-12, "{pb} vs {expected}");
        assert!((pa - pb).abs() > 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut store, grads) = one_param(1.0, f64::NAN);
        let err = Optimizer::new(OptimizerConfig::adam(0.1)).step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("gradient of p"), "{err}");
    }

    #[test]
    fn clipping_caps_norm() {
        let (_, mut grads) = one_param(1.0, 30.0);
        let before = clip_global_norm(&mut grads, 5.0);
        assert_eq!(before, 30.0);
        assert!((grads.global_norm() - 5.0).abs() < 1e-12);
    }
}

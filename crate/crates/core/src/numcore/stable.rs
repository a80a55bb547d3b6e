use crate::error::{Error, Result};

/// `ln(sum(exp(v)))` via max-shift.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Invalid("log_sum_exp of empty vector".into()));
    }
    Ok(lse(v))
}

/// Infallible core; `-inf` for all-`-inf` input.
pub(crate) fn lse(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // Fully masked row: uniform is the only shift-invariant choice.
        let n = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / n);
        return;
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        // ln(e + e^2 + e^3) summed directly
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let v = log_sum_exp(&[1.0, 2.0, 3.0]).unwrap();
        assert!((v - direct).abs() < 1e-14);
        assert!((v - 3.407606).abs() < 1e-6);
        assert!(log_sum_exp(&[]).is_err());
        assert!(log_sum_exp(&[1e300, -1e300]).unwrap().is_finite());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 1.0, 1.0]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(softmax(&[0.0, f64::NEG_INFINITY]), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn lse_bounds(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&v).unwrap();
            prop_assert!(l >= m - 1e-12);
            prop_assert!(l <= m + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
            let p = softmax(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x > 0.0));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

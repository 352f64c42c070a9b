use crate::error::{Error, Result};
use crate::generator::ParamVector;
use crate::scalar::{lit, Scalar};

use super::OptimizerConfig;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step<S: Scalar>(
    params: &mut ParamVector<S>,
    grad: &ParamVector<S>,
    state: &mut AdamState<S>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            iter: state.t as usize,
            context: String::new(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (lit::<S>(cfg.adam_beta1), lit::<S>(cfg.adam_beta2));
    let c1 = lit::<S>(1.0 - cfg.adam_beta1.powi(t));
    let c2 = lit::<S>(1.0 - cfg.adam_beta2.powi(t));
    let lr = lit::<S>(cfg.learning_rate);
    let eps = lit::<S>(cfg.adam_eps);
    let one = S::one();
    for (((p, &g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = OptimizerConfig::default();
        let mut p = ParamVector::new(vec![0.3f64, -1.0]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &ParamVector::zeros(2), &mut st, &cfg).unwrap();
        assert_eq!(p.as_slice(), &[0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig::default();
        let mut p = ParamVector::new(vec![0.0f64]);
        let mut st = AdamState::new(1);
        adam_step(&mut p, &ParamVector::new(vec![1.0]), &mut st, &cfg).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p.as_slice()[0] + cfg.learning_rate / (1.0 + cfg.adam_eps)).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = ParamVector::new(vec![0.1f32, 0.2, 0.3]);
            let mut st = AdamState::new(3);
            for _ in 0..5 {
                adam_step(&mut p, &ParamVector::new(vec![0.5, -2.0, 1e-3]), &mut st, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite_and_mismatch() {
        let cfg = OptimizerConfig::default();
        let mut p = ParamVector::new(vec![0.0f64]);
        let mut st = AdamState::new(1);
        assert!(adam_step(&mut p, &ParamVector::new(vec![f64::NAN]), &mut st, &cfg).is_err());
        assert!(adam_step(&mut p, &ParamVector::new(vec![1.0, 2.0]), &mut st, &cfg).is_err());
    }
}

//! Windowed-moving-variance early stopping.
//!
//! The last `window` outputs are kept in a ring. Once full, the per-pixel
//! variance across the ring is averaged over pixels (`raw_var`) and smoothed by
//! an exponential moving average with coefficient `alpha` (`smooth_var`). From
//! iteration `patience_start` the running minimum of `smooth_var` is tracked;
//! fitting stops once `patience` iterations pass without a strictly lower value.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::generator::ParamVector;
use crate::scalar::Scalar;

use super::EsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EsSnapshot<S> {
    pub params: ParamVector<S>,
    pub output: Array2<S>,
}

#[derive(Debug, Clone)]
pub struct EsState<S> {
    ring: VecDeque<Array2<S>>,
    pub raw_var: Option<f64>,
    pub smooth_var: Option<f64>,
    pub best_var: f64,
    pub best_iter: Option<usize>,
    pub best_snapshot: Option<EsSnapshot<S>>,
    pub since_best: usize,
    last_iter: Option<usize>,
}

impl<S: Scalar> Default for EsState<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Mean over pixels of the population variance across the ring.
fn ring_variance<S: Scalar>(ring: &VecDeque<Array2<S>>) -> f64 {
    let n = ring.len() as f64;
    let slices: Vec<&[S]> = ring.iter().map(|a| a.as_slice().expect("standard layout")).collect();
    let pixels = slices[0].len();
    let mut acc = 0.0;
    for p in 0..pixels {
        let mean = slices.iter().map(|s| s[p].to_f64_lossy()).sum::<f64>() / n;
        acc += slices
            .iter()
            .map(|s| {
                let d = s[p].to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>()
            / n;
    }
    acc / pixels as f64
}

impl<S: Scalar> EsState<S> {
    pub fn new() -> Self {
        EsState {
            ring: VecDeque::new(),
            raw_var: None,
            smooth_var: None,
            best_var: f64::INFINITY,
            best_iter: None,
            best_snapshot: None,
            since_best: 0,
            last_iter: None,
        }
    }

    /// Feed the output and parameters of iteration `iter`.
    pub fn update(&mut self, output: &Array2<S>, params: &ParamVector<S>, iter: usize, cfg: &EsConfig) -> EsDecision {
        if self.ring.len() == cfg.window {
            self.ring.pop_front();
        }
        self.ring.push_back(output.as_standard_layout().into_owned());
        if self.ring.len() < cfg.window {
            self.last_iter = Some(iter);
            return EsDecision::Continue;
        }
        let raw = ring_variance(&self.ring);
        self.raw_var = Some(raw);
        let smooth = match self.smooth_var {
            None => raw,
            Some(prev) => cfg.alpha * raw + (1.0 - cfg.alpha) * prev,
        };
        let (decision, improved) = self.track(smooth, iter, cfg);
        if improved {
            self.best_snapshot = Some(EsSnapshot {
                params: params.clone(),
                output: output.clone(),
            });
        }
        decision
    }

    /// Stopping rule on an already smoothed variance value. Returns the decision
    /// and whether `iter` set a new minimum.
    pub fn track(&mut self, smooth: f64, iter: usize, cfg: &EsConfig) -> (EsDecision, bool) {
        debug_assert!(
            self.last_iter.is_none_or(|l| iter == l + 1),
            "iterations must advance by one"
        );
        self.last_iter = Some(iter);
        self.smooth_var = Some(smooth);
        if iter < cfg.patience_start {
            return (EsDecision::Continue, false);
        }
        let improved = smooth < self.best_var;
        if improved {
            self.best_var = smooth;
            self.best_iter = Some(iter);
        }
        self.since_best = iter - self.best_iter.expect("tracking started");
        let decision = if self.since_best >= cfg.patience {
            EsDecision::Stop
        } else {
            EsDecision::Continue
        };
        (decision, improved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EsConfig {
        EsConfig {
            patience: 50,
            patience_start: 50,
            alpha: 0.1,
            window: 25,
        }
    }

    #[test]
    fn parabola_stops_fifty_after_minimum() {
        let mut es = EsState::<f32>::new();
        let mut stop = None;
        for t in 0..200usize {
            let v = (t as f64 - 100.0).powi(2);
            if es.track(v, t, &cfg()).0 == EsDecision::Stop {
                stop = Some(t);
                break;
            }
        }
        assert_eq!(stop, Some(150));
        assert_eq!(es.best_iter, Some(100));
        assert_eq!(es.since_best, 50);
    }

    #[test]
    fn decreasing_curve_never_stops() {
        let mut es = EsState::<f32>::new();
        for t in 0..200usize {
            assert_eq!(es.track(1.0 / (t as f64 + 1.0), t, &cfg()).0, EsDecision::Continue);
        }
        assert_eq!(es.best_iter, Some(199));
    }

    #[test]
    fn constant_outputs_stop_at_start_plus_patience() {
        let mut es = EsState::<f32>::new();
        let out = Array2::from_elem((4, 4), 0.37f32);
        let p = ParamVector::zeros(3);
        let mut stop = None;
        for t in 0..200usize {
            if es.update(&out, &p, t, &cfg()) == EsDecision::Stop {
                stop = Some(t);
                break;
            }
            if t >= 24 {
                assert_eq!(es.raw_var, Some(0.0));
            }
        }
        assert_eq!(es.best_iter, Some(50));
        assert_eq!(stop, Some(100));
        assert!(es.best_snapshot.is_some());
    }

    #[test]
    fn ring_variance_of_two_values() {
        let mut ring = VecDeque::new();
        ring.push_back(Array2::from_elem((1, 2), 0.0f64));
        ring.push_back(Array2::from_elem((1, 2), 2.0f64));
        assert_eq!(ring_variance(&ring), 1.0);
    }

    #[test]
    fn ema_smoothing() {
        let c = EsConfig {
            window: 2,
            patience_start: 0,
            alpha: 0.5,
            patience: 100,
        };
        let mut es = EsState::<f64>::new();
        let p = ParamVector::zeros(1);
        es.update(&Array2::from_elem((1, 1), 0.0), &p, 0, &c);
        es.update(&Array2::from_elem((1, 1), 2.0), &p, 1, &c);
        assert_eq!(es.smooth_var, Some(1.0));
        es.update(&Array2::from_elem((1, 1), 2.0), &p, 2, &c);
        assert_eq!(es.raw_var, Some(0.0));
        assert_eq!(es.smooth_var, Some(0.5));
    }
}

//! Per-block fitting: Adam on the trainables under a TV penalty, stopped by
//! windowed-moving-variance early stopping.

pub mod adam;
pub mod early_stop;
pub mod tv;

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::generator::{GeneratorState, LossEval, ParamVector};
use crate::scalar::{lit, Scalar};

pub use adam::{adam_step, AdamState};
pub use early_stop::{EsDecision, EsSnapshot, EsState};
pub use tv::{tv, tv_accumulate_grad};

/// Momentum of the running batch-norm statistics.
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lambda: f64,
    pub max_epoch: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lambda: 0.1,
            max_epoch: 200,
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.max_epoch == 0 {
            return bad("max_epoch must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam eps must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsConfig {
    pub patience: usize,
    pub patience_start: usize,
    /// EMA coefficient applied to the raw variance curve.
    pub alpha: f64,
    /// Ring length W.
    pub window: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            patience: 50,
            patience_start: 50,
            alpha: 0.1,
            window: 25,
        }
    }
}

impl EsConfig {
    pub fn validate(&self, max_epoch: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.window == 0 {
            return bad("es window must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.patience_start > max_epoch {
            return bad(format!(
                "patience start {} exceeds max epoch {max_epoch}",
                self.patience_start
            ));
        }
        Ok(())
    }
}

/// Starting point of a block fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Init<S> {
    /// Fresh random trainables drawn from `seed`.
    Fresh {
        seed: u64,
    },
    Params(ParamVector<S>),
}

#[derive(Debug, Clone)]
pub struct BlockFitResult<S> {
    /// Output at the variance minimum (the early-stopped estimate).
    pub restored_mosaic: Array2<S>,
    /// Trainables at `stop_iter`, used as warm-start history.
    pub final_params: ParamVector<S>,
    /// Trainables at `best_iter`.
    pub best_params: ParamVector<S>,
    pub stop_iter: usize,
    pub best_iter: usize,
    /// True when the stopping rule fired before `max_epoch`.
    pub stopped_early: bool,
    pub loss_trace: Vec<f64>,
    pub raw_var_trace: Vec<Option<f64>>,
    pub var_trace: Vec<Option<f64>>,
}

impl<S: Scalar> BlockFitResult<S> {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("at least one iteration")
    }

    /// Iterations run, counting the stop iteration.
    pub fn iterations(&self) -> usize {
        self.stop_iter + 1
    }

    /// First iteration whose loss is at or below `threshold`.
    pub fn first_iter_reaching(&self, threshold: f64) -> Option<usize> {
        self.loss_trace.iter().position(|&l| l <= threshold)
    }

    /// CSV with columns `iter,loss,raw_var,smooth_var`; variances are empty
    /// until the ring fills.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,loss,raw_var,smooth_var\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, &l) in self.loss_trace.iter().enumerate() {
            s.push_str(&format!(
                "{i},{l},{},{}\n",
                opt(self.raw_var_trace[i]),
                opt(self.var_trace[i])
            ));
        }
        s
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.trace_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn fit_block<S: Scalar>(
    gen: &mut GeneratorState<S>,
    init: Init<S>,
    target: &Array2<S>,
    opt: &OptimizerConfig,
    es_cfg: &EsConfig,
) -> Result<BlockFitResult<S>> {
    fit_block_observed(gen, init, target, opt, es_cfg, |_, _| {})
}

/// [`fit_block`] with a callback invoked after every loss evaluation.
pub fn fit_block_observed<S: Scalar, F>(
    gen: &mut GeneratorState<S>,
    init: Init<S>,
    target: &Array2<S>,
    opt: &OptimizerConfig,
    es_cfg: &EsConfig,
    mut observer: F,
) -> Result<BlockFitResult<S>>
where
    F: FnMut(usize, &LossEval<S>),
{
    opt.validate()?;
    es_cfg.validate(opt.max_epoch)?;
    let start = match init {
        Init::Fresh { seed } => gen.fresh_params(seed),
        Init::Params(p) => p,
    };
    gen.set_params(&start)?;
    let lambda = lit::<S>(opt.lambda);
    let mut adam = AdamState::new(gen.trainable_count());
    let mut es = EsState::new();
    let mut loss_trace = Vec::with_capacity(opt.max_epoch);
    let mut raw_var_trace = Vec::with_capacity(opt.max_epoch);
    let mut var_trace = Vec::with_capacity(opt.max_epoch);
    let mut last_output = None;
    let mut stop_iter = 0;
    let mut stopped_early = false;

    for iter in 0..opt.max_epoch {
        let eval = gen.loss_and_gradients(target, lambda).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                iter,
                context: recent_context(&loss_trace),
            },
            other => other,
        })?;
        observer(iter, &eval);
        gen.update_running_stats(&eval.batch_stats, lit::<S>(BN_MOMENTUM));
        loss_trace.push(eval.loss.to_f64_lossy());
        let decision = es.update(&eval.output, gen.params(), iter, es_cfg);
        raw_var_trace.push(es.raw_var);
        var_trace.push(es.smooth_var);
        stop_iter = iter;
        if decision == EsDecision::Stop {
            stopped_early = true;
            last_output = Some(eval.output);
            break;
        }
        if iter + 1 == opt.max_epoch {
            last_output = Some(eval.output);
            break;
        }
        adam_step(gen.params_mut(), &eval.grad, &mut adam, opt).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                iter,
                context: recent_context(&loss_trace),
            },
            other => other,
        })?;
    }

    let final_params = gen.get_params();
    let (restored_mosaic, best_params, best_iter) = match (es.best_snapshot, es.best_iter) {
        (Some(snap), Some(best)) => (snap.output, snap.params, best),
        // tracking never started: fall back to the last iterate
        _ => (last_output.expect("ran at least once"), final_params.clone(), stop_iter),
    };
    Ok(BlockFitResult {
        restored_mosaic,
        final_params,
        best_params,
        stop_iter,
        best_iter,
        stopped_early,
        loss_trace,
        raw_var_trace,
        var_trace,
    })
}

fn recent_context(trace: &[f64]) -> String {
    let tail = &trace[trace.len().saturating_sub(5)..];
    format!(" (recent losses: {tail:?})")
}

//! Whole-sequence restoration: sliding blocks, mosaicing, warm-started fits and
//! reassembly of the output frames.
//!
//! One generator (frozen weights from `derive(seed, STREAM_FROZEN, 0)`) serves
//! every block, so trainables carry over between blocks. Fresh starts of block
//! `k` draw from `derive(seed, STREAM_BLOCK, k)`.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::generator::{GeneratorState, HourglassConfig};
use crate::mosaic::{grid_for_block_size, shuffle_block, unshuffle, MosaicGrid};
use crate::optimize::{fit_block, EsConfig, Init, OptimizerConfig};
use crate::scalar::Scalar;
use crate::seeds::{derive, STREAM_BLOCK, STREAM_FROZEN};
use crate::seqio::{Frame, FrameSequence};
use crate::warmstart::{InitSpec, ParamHistory};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub block_size: usize,
    /// Defaults to `block_size` when `None`.
    pub stride: Option<usize>,
    /// Overrides [`grid_for_block_size`].
    pub grid: Option<MosaicGrid>,
    pub gen_cfg: HourglassConfig,
    pub opt_cfg: OptimizerConfig,
    pub es_cfg: EsConfig,
    pub seed: u64,
    /// Start block 1 from block 0's trainables instead of a fresh draw.
    pub warm_copy_block1: bool,
    /// Directory for per-block `block_NNN.csv` traces.
    pub trace_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            block_size: 5,
            stride: None,
            grid: None,
            gen_cfg: HourglassConfig::default(),
            opt_cfg: OptimizerConfig::default(),
            es_cfg: EsConfig::default(),
            seed: 0,
            warm_copy_block1: false,
            trace_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.block_size)
    }

    pub fn grid(&self) -> MosaicGrid {
        self.grid.unwrap_or_else(|| grid_for_block_size(self.block_size))
    }

    /// Checks everything that does not depend on the input sequence.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.block_size == 0 {
            return bad("block size must be positive".into());
        }
        let s = self.stride();
        if s == 0 || s > self.block_size {
            return bad(format!("stride must lie in 1..={}, got {s}", self.block_size));
        }
        if let Some(g) = self.grid {
            if g.block_size() != self.block_size {
                return bad(format!(
                    "grid {g} holds {} frames, block size is {}",
                    g.block_size(),
                    self.block_size
                ));
            }
        }
        self.gen_cfg.validate()?;
        self.opt_cfg.validate()?;
        self.es_cfg.validate(self.opt_cfg.max_epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledBlock {
    pub start: usize,
    /// Frames this block writes to the output.
    pub emit: Range<usize>,
}

pub type BlockSchedule = Vec<ScheduledBlock>;

/// Blocks start at `0, S, 2S, ...`; the last start is clamped to `n - T`. Each
/// block emits the frames of its span that no earlier block emitted.
pub fn schedule_blocks(n_frames: usize, block: usize, stride: usize) -> Result<BlockSchedule> {
    if block == 0 || stride == 0 || stride > block {
        return Err(Error::InvalidConfig(format!("block {block}, stride {stride}")));
    }
    if n_frames < block {
        return Err(Error::SequenceTooShort {
            frames: n_frames,
            block,
        });
    }
    let mut out = Vec::new();
    let mut emitted = 0;
    let mut start = 0;
    loop {
        let s = start.min(n_frames - block);
        let end = s + block;
        out.push(ScheduledBlock {
            start: s,
            emit: emitted..end,
        });
        emitted = end;
        if end == n_frames {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Original size of a padded mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRecord {
    pub h: usize,
    pub w: usize,
}

fn reflect(i: usize, n: usize) -> usize {
    let p = i % (2 * n);
    if p < n {
        p
    } else {
        2 * n - 1 - p
    }
}

/// Symmetric padding on the bottom and right up to the next multiple of
/// `2^scales`.
pub fn pad_for_scales<S: Copy>(x: &Array2<S>, scales: usize) -> (Array2<S>, CropRecord) {
    let d = 1usize << scales;
    let (h, w) = x.dim();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    let padded = Array2::from_shape_fn((ph, pw), |(i, j)| x[[reflect(i, h), reflect(j, w)]]);
    (padded, CropRecord { h, w })
}

pub fn crop<S: Copy>(x: &Array2<S>, rec: CropRecord) -> Array2<S> {
    x.slice(ndarray::s![..rec.h, ..rec.w]).to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub index: usize,
    pub start: usize,
    pub emit: Range<usize>,
    /// `fresh`, `copy` or `predicted`.
    pub init: &'static str,
    /// Seed of a fresh start.
    pub init_seed: Option<u64>,
    pub stop_iter: usize,
    pub best_iter: usize,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub best_var: Option<f64>,
    pub wall_time_secs: f64,
    pub loss_trace: Vec<f64>,
    pub var_trace: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub n_frames: usize,
    pub dims: (usize, usize),
    pub block_size: usize,
    pub stride: usize,
    pub grid: MosaicGrid,
    pub padded_dims: (usize, usize),
    pub seed: u64,
    pub trainable_count: usize,
    pub frozen_checksum: u64,
    pub blocks: Vec<BlockReport>,
}

impl RunReport {
    /// `key = value` lines. Wall times are left out so reruns compare equal
    /// byte for byte; traces go to the CSV files.
    ///
    /// Run keys: `n_frames`, `height`, `width`, `block_size`, `stride`, `grid`,
    /// `padded_height`, `padded_width`, `seed`, `trainable_count`,
    /// `frozen_checksum`, `n_blocks`. Block keys are prefixed `block.<k>.`:
    /// `start`, `emit` (half-open `a..b`), `init`, `init_seed`, `stop_iter`,
    /// `best_iter`, `stopped_early`, `final_loss`, `best_var`.
    pub fn to_kv(&self) -> String {
        let mut s = String::from("# turbdip run report v1\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("n_frames", self.n_frames.to_string());
        kv("height", self.dims.0.to_string());
        kv("width", self.dims.1.to_string());
        kv("block_size", self.block_size.to_string());
        kv("stride", self.stride.to_string());
        kv("grid", self.grid.to_string());
        kv("padded_height", self.padded_dims.0.to_string());
        kv("padded_width", self.padded_dims.1.to_string());
        kv("seed", self.seed.to_string());
        kv("trainable_count", self.trainable_count.to_string());
        kv("frozen_checksum", format!("{:016x}", self.frozen_checksum));
        kv("n_blocks", self.blocks.len().to_string());
        for b in &self.blocks {
            let p = format!("block.{}.", b.index);
            kv(&format!("{p}start"), b.start.to_string());
            kv(&format!("{p}emit"), format!("{}..{}", b.emit.start, b.emit.end));
            kv(&format!("{p}init"), b.init.to_string());
            if let Some(seed) = b.init_seed {
                kv(&format!("{p}init_seed"), seed.to_string());
            }
            kv(&format!("{p}stop_iter"), b.stop_iter.to_string());
            kv(&format!("{p}best_iter"), b.best_iter.to_string());
            kv(&format!("{p}stopped_early"), b.stopped_early.to_string());
            kv(&format!("{p}final_loss"), b.final_loss.to_string());
            if let Some(v) = b.best_var {
                kv(&format!("{p}best_var"), v.to_string());
            }
        }
        s
    }
}

/// Restore the luma of `seq` in single precision. Output frames are grayscale;
/// see [`crate::seqio::recombine_color`] for color input.
pub fn run(seq: &FrameSequence, cfg: &PipelineConfig) -> Result<(FrameSequence, RunReport)> {
    run_with::<f32, _>(seq, cfg, |_| {})
}

/// [`run`] at precision `S`, calling `progress` after each block.
pub fn run_with<S: Scalar, F: FnMut(&BlockReport)>(
    seq: &FrameSequence,
    cfg: &PipelineConfig,
    mut progress: F,
) -> Result<(FrameSequence, RunReport)> {
    cfg.validate()?;
    let t = cfg.block_size;
    let grid = cfg.grid();
    let schedule = schedule_blocks(seq.len(), t, cfg.stride())?;
    let (h, w) = seq.dims();
    let d = cfg.gen_cfg.divisor();
    let padded_dims = ((h * grid.g_y).div_ceil(d) * d, (w * grid.g_x).div_ceil(d) * d);
    let mut gen = GeneratorState::<S>::new(cfg.gen_cfg, padded_dims, derive(cfg.seed, STREAM_FROZEN, 0))?;
    if let Some(dir) = &cfg.trace_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let planes: Vec<Array2<S>> = seq
        .frames()
        .iter()
        .map(|f| f.luma.mapv(|v| S::from_f64_lossy(v as f64)))
        .collect();
    let mut out: Vec<Option<Array2<f32>>> = vec![None; seq.len()];
    let mut history = ParamHistory::<S>::new();
    let mut blocks = Vec::with_capacity(schedule.len());

    for (k, sb) in schedule.iter().enumerate() {
        let clock = Instant::now();
        let wrap = |e: Error| Error::Block {
            block: k,
            source: Box::new(e),
        };
        let mosaic = shuffle_block(&planes[sb.start..sb.start + t], grid).map_err(wrap)?;
        let (target, rec) = pad_for_scales(&mosaic.data, cfg.gen_cfg.scales);

        let spec = if k == 1 && !cfg.warm_copy_block1 {
            InitSpec::FreshRandom
        } else {
            history.predict_init().map_err(wrap)?
        };
        let kind = spec.kind();
        let fresh_seed = derive(cfg.seed, STREAM_BLOCK, k as u64);
        let (init, init_seed) = match spec {
            InitSpec::FreshRandom => (Init::Fresh { seed: fresh_seed }, Some(fresh_seed)),
            InitSpec::Copy(p) | InitSpec::Predicted(p) => (Init::Params(p), None),
        };

        let fit = fit_block(&mut gen, init, &target, &cfg.opt_cfg, &cfg.es_cfg).map_err(wrap)?;
        if let Some(dir) = &cfg.trace_dir {
            fit.write_trace_csv(&dir.join(format!("block_{k:03}.csv")))
                .map_err(wrap)?;
        }
        let frames = unshuffle(&crop(&fit.restored_mosaic, rec), grid).map_err(wrap)?;
        for idx in sb.emit.clone() {
            out[idx] = Some(frames[idx - sb.start].mapv(|v| v.to_f64_lossy() as f32));
        }
        history.push(k, fit.final_params.clone()).map_err(wrap)?;

        let report = BlockReport {
            index: k,
            start: sb.start,
            emit: sb.emit.clone(),
            init: kind,
            init_seed,
            stop_iter: fit.stop_iter,
            best_iter: fit.best_iter,
            stopped_early: fit.stopped_early,
            final_loss: fit.final_loss(),
            best_var: fit.var_trace.get(fit.best_iter).copied().flatten(),
            wall_time_secs: clock.elapsed().as_secs_f64(),
            loss_trace: fit.loss_trace,
            var_trace: fit.var_trace,
        };
        progress(&report);
        blocks.push(report);
    }

    let frames = out
        .into_iter()
        .map(|f| Frame::gray(f.expect("schedule covers every frame")))
        .collect();
    let mut restored = FrameSequence::new(frames)?;
    restored.frame_rate = seq.frame_rate;
    let report = RunReport {
        n_frames: seq.len(),
        dims: (h, w),
        block_size: t,
        stride: cfg.stride(),
        grid,
        padded_dims,
        seed: cfg.seed,
        trainable_count: gen.trainable_count(),
        frozen_checksum: gen.frozen_checksum(),
        blocks,
    };
    Ok((restored, report))
}

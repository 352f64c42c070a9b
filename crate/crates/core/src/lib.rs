//! Zero-shot restoration of turbulence-distorted image sequences.
//!
//! Each temporal block of frames is interlaced into a single mosaic, and a small
//! untrained hourglass generator is fitted to it. Only the latent input and the
//! batch-norm affine parameters are optimized; the convolution weights stay at
//! their random initialization. Fitting runs under a total-variation penalty and
//! stops at the minimum of the windowed moving variance of the outputs. Each new
//! block is warm-started by linear extrapolation from the two previous blocks.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the production precision.

pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod metrics;
pub mod mosaic;
pub mod optimize;
pub mod pipeline;
pub mod scalar;
pub mod seeds;
pub mod seqio;
pub mod turbsim;
pub mod warmstart;

pub use error::{Error, Result};
pub use generator::{GeneratorState, HourglassConfig, ParamVector};
pub use mosaic::{grid_for_block_size, shuffle_block, unshuffle_mosaic, Mosaic, MosaicGrid};
pub use optimize::{fit_block, tv, BlockFitResult, EsConfig, EsState, Init, OptimizerConfig};
pub use pipeline::{run, schedule_blocks, PipelineConfig, RunReport};
pub use scalar::Scalar;
pub use seqio::{Frame, FrameSequence, MaskSequence};
pub use warmstart::{InitSpec, ParamHistory};

/// Single-precision generator used for production restoration.
pub type Generator32 = GeneratorState<f32>;
/// Double-precision generator used for gradient verification.
pub type Generator64 = GeneratorState<f64>;
pub type Params32 = ParamVector<f32>;
pub type Params64 = ParamVector<f64>;
pub type Fit32 = BlockFitResult<f32>;
pub type Mosaic32 = Mosaic<f32>;

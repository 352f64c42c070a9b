//! Command-line definition and `--config` file merging.
//!
//! A config file holds `key = value` lines whose keys are the long flag names
//! of the chosen subcommand (without the dashes). `#` starts a comment. Boolean
//! flags take `true` or `false`. Flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use turbdip::generator::HourglassConfig;
use turbdip::mosaic::MosaicGrid;
use turbdip::optimize::{EsConfig, OptimizerConfig};
use turbdip::pipeline::PipelineConfig;
use turbdip::seqio::OutputFormat;
use turbdip::turbsim::TurbulenceParams;

#[derive(Debug, Parser)]
#[command(
    name = "turbdip",
    version,
    about = "Zero-shot turbulence mitigation for image sequences"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Restore a distorted sequence.
    Restore(RestoreArgs),
    /// Background variance, plus PSNR/SSIM against a reference.
    Metrics(MetricsArgs),
    /// Synthesize a turbulence-distorted sequence from a clean image.
    Simulate(SimulateArgs),
    /// Run built-in numerical checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Png,
    Pgm,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Png => OutputFormat::Png8,
            Format::Pgm => OutputFormat::Pgm8,
        }
    }
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Input frames: a directory, a glob pattern or a single image.
    #[arg(long)]
    pub input: String,
    /// Output directory for restored frames and the run report.
    #[arg(long)]
    pub output: PathBuf,
    /// Frames per block.
    #[arg(long, default_value_t = 5)]
    pub block_size: usize,
    /// Frames between block starts (defaults to the block size).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Mosaic grid as GYxGX; must hold exactly block-size frames.
    #[arg(long)]
    pub grid: Option<MosaicGrid>,
    /// Iteration cap per block.
    #[arg(long, default_value_t = 200)]
    pub max_epoch: usize,
    /// Iterations without a new variance minimum before stopping.
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    /// Iteration at which minimum tracking begins.
    #[arg(long, default_value_t = 50)]
    pub patience_start: usize,
    /// Smoothing factor of the variance average.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Total-variation weight.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub lr: f64,
    /// Number of recent outputs in the variance window.
    #[arg(long, default_value_t = 25)]
    pub es_window: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Encoder/decoder levels of the generator.
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    /// Feature channels per level.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Skip-branch channels per level (0 disables skips).
    #[arg(long, default_value_t = 4)]
    pub skip_channels: usize,
    /// Channels of the latent input.
    #[arg(long, default_value_t = 16)]
    pub latent_channels: usize,
    /// Start block 1 from block 0's result instead of a fresh draw.
    #[arg(long)]
    pub warm_copy_block1: bool,
    /// Write per-block loss/variance CSV traces to OUTPUT/traces.
    #[arg(long)]
    pub trace: bool,
    /// Background masks; adds a metrics report for input and output.
    #[arg(long)]
    pub masks: Option<String>,
    /// Ground-truth frames; adds PSNR/SSIM to the metrics report.
    #[arg(long)]
    pub reference: Option<String>,
    /// Output image format.
    #[arg(long, value_enum, default_value_t = Format::Png)]
    pub format: Format,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
    /// Config file of key = value lines (keys are these flag names).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RestoreArgs {
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            block_size: self.block_size,
            stride: self.stride,
            grid: self.grid,
            gen_cfg: HourglassConfig {
                scales: self.scales,
                channels: self.channels,
                skip_channels: self.skip_channels,
                latent_channels: self.latent_channels,
                ..Default::default()
            },
            opt_cfg: OptimizerConfig {
                lambda: self.lambda,
                max_epoch: self.max_epoch,
                learning_rate: self.lr,
                ..Default::default()
            },
            es_cfg: EsConfig {
                patience: self.patience,
                patience_start: self.patience_start,
                alpha: self.alpha,
                window: self.es_window,
            },
            seed: self.seed,
            warm_copy_block1: self.warm_copy_block1,
            trace_dir: self.trace.then(|| self.output.join("traces")),
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Frames to evaluate.
    #[arg(long)]
    pub input: String,
    /// Background masks (one image, or one per frame); all pixels if omitted.
    #[arg(long)]
    pub masks: Option<String>,
    /// Ground-truth frames for PSNR/SSIM.
    #[arg(long)]
    pub reference: Option<String>,
    /// Externally computed blind quality index to record in the report.
    #[arg(long, allow_negative_numbers = true)]
    pub biqi: Option<f64>,
    /// Report file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Config file of key = value lines (keys are these flag names).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Clean frame(s); a built-in test scene if omitted.
    #[arg(long)]
    pub input: Option<String>,
    /// Output directory; receives distorted/, clean/ and params.txt.
    #[arg(long)]
    pub output: PathBuf,
    /// Number of frames to synthesize.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Test scene height.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Test scene width.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Largest displacement in pixels.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub tilt_strength: f64,
    /// Smoothing sigma of the tilt field in pixels.
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub tilt_smoothness: f64,
    /// Blur sigma in pixels.
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    pub blur_sigma: f64,
    /// Noise standard deviation on the [0, 1] scale.
    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    pub noise_sigma: f64,
    /// Correlation between consecutive tilt fields, in [0, 1).
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub temporal_correlation: f64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output image format.
    #[arg(long, value_enum, default_value_t = Format::Png)]
    pub format: Format,
    /// Config file of key = value lines (keys are these flag names).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn params(&self) -> TurbulenceParams {
        TurbulenceParams {
            tilt_strength: self.tilt_strength,
            tilt_smoothness: self.tilt_smoothness,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            temporal_correlation: self.temporal_correlation,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Seed for sampled coordinates and probe data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Config file of key = value lines (keys are these flag names).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Long flag names a config file may use for `subcommand`.
pub fn config_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(subcommand) else {
        return Vec::new();
    };
    sub.get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|l| !matches!(*l, "config" | "help" | "version"))
        .map(str::to_string)
        .collect()
}

fn is_switch(subcommand: &str, key: &str) -> bool {
    let cmd = Cli::command();
    cmd.find_subcommand(subcommand)
        .and_then(|s| {
            s.get_arguments()
                .find(|a| a.get_long() == Some(key))
                .map(|a| !a.get_action().takes_values())
        })
        .unwrap_or(false)
}

/// Turn a config file into flags for `subcommand`.
pub fn config_to_args(subcommand: &str, text: &str) -> Result<Vec<OsString>, String> {
    let keys = config_keys(subcommand);
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !keys.iter().any(|x| x == k) {
            return Err(format!("config line {}: unknown key {k:?} for {subcommand}", n + 1));
        }
        if is_switch(subcommand, k) {
            match v {
                "true" => out.push(format!("--{k}").into()),
                "false" => {}
                _ => return Err(format!("config line {}: {k} takes true or false", n + 1)),
            }
        } else {
            out.push(format!("--{k}").into());
            out.push(v.into());
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(2);
    while let Some(a) = it.next() {
        let a = a.to_str()?;
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Parse `argv`, splicing in the config file's flags ahead of the command
/// line's own so that explicit flags take precedence.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, Failure> {
    let Some(path) = config_path(&argv) else {
        return Cli::try_parse_from(&argv).map_err(Failure::Clap);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let sub = argv[1].to_str().unwrap_or_default().to_string();
    let extra = config_to_args(&sub, &text).map_err(Failure::Usage)?;
    let mut merged = argv[..2].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[2..]);
    Cli::try_parse_from(merged).map_err(Failure::Clap)
}

#[derive(Debug)]
pub enum Failure {
    Clap(clap::Error),
    Usage(String),
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let cli = parse(argv("turbdip restore --input in --output out")).unwrap();
        let Command::Restore(a) = cli.command else { panic!() };
        let p = a.pipeline_config();
        assert_eq!(p.block_size, 5);
        assert_eq!(p.opt_cfg.max_epoch, 200);
        assert_eq!(p.es_cfg.patience, 50);
        assert_eq!(p.es_cfg.patience_start, 50);
        assert_eq!(p.es_cfg.alpha, 0.1);
        assert_eq!(p.opt_cfg.lambda, 0.1);
        assert_eq!(p.grid(), MosaicGrid { g_y: 5, g_x: 1 });
        assert!(p.validate().is_ok());
    }

    #[test]
    fn block_size_four_gives_square_grid() {
        let cli = parse(argv("turbdip restore --input in --output out --block-size 4")).unwrap();
        let Command::Restore(a) = cli.command else { panic!() };
        assert_eq!(a.pipeline_config().grid(), MosaicGrid { g_y: 2, g_x: 2 });
    }

    #[test]
    fn negative_lambda_parses_then_fails_validation() {
        let cli = parse(argv("turbdip restore --input in --output out --lambda -1")).unwrap();
        let Command::Restore(a) = cli.command else { panic!() };
        assert!(a.pipeline_config().validate().is_err());
    }

    #[test]
    fn config_lines() {
        let args = config_to_args("restore", "# c\nlambda = 0.2\nwarm-copy-block1 = true\ntrace = false\n").unwrap();
        assert_eq!(args, argv("--lambda 0.2 --warm-copy-block1"));
        assert!(config_to_args("restore", "bogus = 1").is_err());
        assert!(config_to_args("restore", "config = x").is_err());
        assert!(config_to_args("restore", "lambda").is_err());
        assert!(config_to_args("restore", "trace = yes").is_err());
    }

    #[test]
    fn config_file_supplies_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "input = frames\noutput = out\nseed = 9\nlambda = 0.3\n").unwrap();
        let line = format!("turbdip restore --config {} --lambda 0.05", cfg.display());
        let Command::Restore(a) = parse(argv(&line)).unwrap().command else {
            panic!()
        };
        assert_eq!(a.input, "frames");
        assert_eq!(a.seed, 9);
        assert_eq!(a.lambda, 0.05);
    }

    #[test]
    fn unknown_flag_rejected() {
        assert!(matches!(
            parse(argv("turbdip restore --input a --output b --nope 1")),
            Err(Failure::Clap(_))
        ));
    }
}

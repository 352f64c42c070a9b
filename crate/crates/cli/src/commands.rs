use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use turbdip::metrics::MetricsReport;
use turbdip::pipeline::run_with;
use turbdip::seqio::{self, FrameSequence, MaskSequence};
use turbdip::turbsim::{self, synthesize_sequence};

use crate::args::{MetricsArgs, RestoreArgs, SimulateArgs};

/// A configuration problem found before any work starts.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(m: impl Into<String>) -> anyhow::Error {
    Usage(m.into()).into()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| turbdip::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| turbdip::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn masks_for(pattern: Option<&str>, seq: &FrameSequence) -> Result<MaskSequence> {
    Ok(match pattern {
        Some(p) => seqio::load_masks(p, seq)?,
        None => MaskSequence::all_background(seq.len(), seq.dims()),
    })
}

pub fn restore(a: &RestoreArgs) -> Result<()> {
    let cfg = a.pipeline_config();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let seq = seqio::load_sequence(&a.input)?;
    let masks = a.masks.as_deref().map(|m| seqio::load_masks(m, &seq)).transpose()?;
    let reference = a.reference.as_deref().map(seqio::load_sequence).transpose()?;
    if let Some(r) = &reference {
        if r.len() != seq.len() || r.dims() != seq.dims() {
            return Err(turbdip::Error::DimensionMismatch(
                "reference must match the input's frame count and size".into(),
            )
            .into());
        }
    }
    create_dir(&a.output)?;
    let (h, w) = seq.dims();
    if !a.quiet {
        eprintln!(
            "restoring {} frames of {h}x{w}, block {} stride {} grid {}",
            seq.len(),
            cfg.block_size,
            cfg.stride(),
            cfg.grid()
        );
    }
    let quiet = a.quiet;
    let (restored, report) = run_with::<f32, _>(&seq, &cfg, |b| {
        if !quiet {
            eprintln!(
                "block {} [{}..{}) {}: stop {} best {} loss {:.4} ({:.1}s)",
                b.index,
                b.start,
                b.start + cfg.block_size,
                b.init,
                b.stop_iter,
                b.best_iter,
                b.final_loss,
                b.wall_time_secs
            );
        }
    })?;
    let restored = if seq.has_chroma() {
        seqio::recombine_color(&restored, &seq)?
    } else {
        restored
    };
    seqio::write_sequence(&restored, &a.output, a.format.into())?;
    write_text(&a.output.join("report.txt"), &report.to_kv())?;

    if masks.is_some() || reference.is_some() {
        let m = match masks {
            Some(m) => m,
            None => MaskSequence::all_background(seq.len(), seq.dims()),
        };
        let before = MetricsReport::compute(&seq, &m, reference.as_ref())?;
        let after = MetricsReport::compute(&restored, &m, reference.as_ref())?;
        write_text(&a.output.join("metrics_input.txt"), &before.to_kv())?;
        write_text(&a.output.join("metrics_restored.txt"), &after.to_kv())?;
        if !a.quiet {
            eprintln!(
                "background_var {:.4} -> {:.4}",
                before.background_var, after.background_var
            );
            if let (Some(p0), Some(p1)) = (before.mean_psnr, after.mean_psnr) {
                eprintln!("mean_psnr {p0:.3} -> {p1:.3} dB");
            }
        }
    }
    Ok(())
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    if let Some(b) = a.biqi {
        if !b.is_finite() {
            return Err(usage("biqi must be finite"));
        }
    }
    let seq = seqio::load_sequence(&a.input)?;
    let masks = masks_for(a.masks.as_deref(), &seq)?;
    let reference = a.reference.as_deref().map(seqio::load_sequence).transpose()?;
    let mut report = MetricsReport::compute(&seq, &masks, reference.as_ref())?;
    report.biqi = a.biqi;

    println!("{:<22}{}", "frames", seq.len());
    println!("{:<22}{}", "background_pixels", report.n_background_pixels);
    println!("{:<22}{:.4}", "background_var", report.background_var);
    if let Some(v) = report.mean_psnr {
        println!("{:<22}{:.4}", "mean_psnr_db", v);
    }
    if let Some(v) = report.mean_ssim {
        println!("{:<22}{:.4}", "mean_ssim", v);
    }
    if let Some(v) = report.biqi {
        println!("{:<22}{:.4}", "biqi", v);
    }
    if let Some(path) = &a.output {
        write_text(path, &report.to_kv())?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let params = a.params();
    params.validate().map_err(|e| usage(e.to_string()))?;
    if a.frames == 0 {
        return Err(usage("frames must be positive"));
    }
    let clean = match &a.input {
        Some(p) => seqio::load_sequence(p)?,
        None => {
            if a.height == 0 || a.width == 0 {
                return Err(usage("height and width must be positive"));
            }
            FrameSequence::from_luma(vec![turbsim::test_scene(a.height, a.width)])?
        }
    };
    let (distorted, clean_out) = synthesize_sequence(&clean, a.frames, &params, a.seed)?;
    let (dd, cd) = (a.output.join("distorted"), a.output.join("clean"));
    create_dir(&dd)?;
    create_dir(&cd)?;
    seqio::write_sequence(&distorted, &dd, a.format.into())?;
    seqio::write_sequence(&clean_out, &cd, a.format.into())?;
    let record = format!(
        "# turbdip simulation v1\nframes = {}\nseed = {}\n{}",
        a.frames,
        a.seed,
        params.to_kv()
    );
    write_text(&a.output.join("params.txt"), &record)
        .with_context(|| format!("writing parameter record under {}", a.output.display()))?;
    eprintln!("wrote {} frames to {}", a.frames, a.output.display());
    Ok(())
}

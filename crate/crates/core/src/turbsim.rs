//! Synthetic turbulence: smooth random tilts, blur and sensor noise applied to
//! clean frames, giving ground truth for evaluation.
//!
//! Tilt field `k` of a sequence is drawn from `derive(seed, STREAM_TILT, k)` and
//! the noise of frame `k` from `derive(seed, STREAM_NOISE, k)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeds::{derive, STREAM_NOISE, STREAM_TILT};
use crate::seqio::{Frame, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceParams {
    /// Largest displacement magnitude in pixels.
    pub tilt_strength: f64,
    /// Gaussian sigma used to smooth the white tilt field.
    pub tilt_smoothness: f64,
    pub blur_sigma: f64,
    /// Standard deviation of additive noise on the `[0, 1]` scale.
    pub noise_sigma: f64,
    /// AR(1) coefficient linking consecutive tilt fields.
    pub temporal_correlation: f64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        TurbulenceParams {
            tilt_strength: 2.0,
            tilt_smoothness: 4.0,
            blur_sigma: 0.7,
            noise_sigma: 0.02,
            temporal_correlation: 0.5,
        }
    }
}

impl TurbulenceParams {
    /// No distortion at all.
    pub fn none() -> Self {
        TurbulenceParams {
            tilt_strength: 0.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let nonneg = [
            ("tilt strength", self.tilt_strength),
            ("blur sigma", self.blur_sigma),
            ("noise sigma", self.noise_sigma),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.tilt_smoothness.is_finite() && self.tilt_smoothness > 0.0) {
            return bad(format!("tilt smoothness must be > 0, got {}", self.tilt_smoothness));
        }
        let c = self.temporal_correlation;
        if !(c.is_finite() && (0.0..1.0).contains(&c)) {
            return bad(format!("temporal correlation must lie in [0, 1), got {c}"));
        }
        Ok(())
    }

    /// `key = value` record of the parameters.
    pub fn to_kv(&self) -> String {
        format!(
            "tilt_strength = {}\ntilt_smoothness = {}\nblur_sigma = {}\nnoise_sigma = {}\ntemporal_correlation = {}\n",
            self.tilt_strength, self.tilt_smoothness, self.blur_sigma, self.noise_sigma, self.temporal_correlation
        )
    }
}

/// Per-pixel displacement in pixels; `dx` is horizontal, `dy` vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
}

impl TiltField {
    pub fn zeros(dims: (usize, usize)) -> Self {
        TiltField {
            dx: Array2::zeros(dims),
            dy: Array2::zeros(dims),
        }
    }

    pub fn uniform(dims: (usize, usize), dx: f64, dy: f64) -> Self {
        TiltField {
            dx: Array2::from_elem(dims, dx),
            dy: Array2::from_elem(dims, dy),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dim()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(self.dy.iter())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    fn scale_to(&mut self, magnitude: f64) {
        let m = self.max_magnitude();
        let f = if m > 0.0 { magnitude / m } else { 0.0 };
        self.dx.mapv_inplace(|v| v * f);
        self.dy.mapv_inplace(|v| v * f);
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric index, valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let p = i.rem_euclid(2 * n);
    (if p < n { p } else { 2 * n - 1 - p }) as usize
}

/// Separable Gaussian filter with symmetric boundary handling. `sigma == 0`
/// returns the input.
pub fn gaussian_blur(x: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma == 0.0 {
        return x.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = x.dim();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * x[[i, reflect(j as isize + t as isize - r, w)]])
            .sum()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * rows[[reflect(i as isize + t as isize - r, h), j]])
            .sum()
    })
}

fn white_field(dims: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dims, || rng.sample(StandardNormal))
}

/// Smoothed Gaussian tilt field whose largest displacement is `tilt_strength`.
///
/// With `prev`, the fresh field is mixed as `c * prev + sqrt(1 - c^2) * new`
/// and rescaled to the same maximum magnitude.
pub fn random_tilt_field(
    dims: (usize, usize),
    params: &TurbulenceParams,
    prev: Option<&TiltField>,
    seed: u64,
) -> TiltField {
    if params.tilt_strength == 0.0 {
        return TiltField::zeros(dims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = TiltField {
        dx: gaussian_blur(&white_field(dims, &mut rng), params.tilt_smoothness),
        dy: gaussian_blur(&white_field(dims, &mut rng), params.tilt_smoothness),
    };
    f.scale_to(params.tilt_strength);
    if let Some(p) = prev {
        let c = params.temporal_correlation;
        let s = (1.0 - c * c).sqrt();
        f.dx = &p.dx * c + &f.dx * s;
        f.dy = &p.dy * c + &f.dy * s;
        f.scale_to(params.tilt_strength);
    }
    f
}

/// Bilinear backward warp: output `(i, j)` samples the input at
/// `(i + dy, j + dx)`, replicating edges.
pub fn warp(x: &Array2<f64>, tilt: &TiltField) -> Array2<f64> {
    let (h, w) = x.dim();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let y = clamp(i as f64 + tilt.dy[[i, j]], h);
        let xx = clamp(j as f64 + tilt.dx[[i, j]], w);
        let (y0, x0) = (y.floor() as usize, xx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
        let top = x[[y0, x0]] * (1.0 - fx) + x[[y0, x1]] * fx;
        let bot = x[[y1, x0]] * (1.0 - fx) + x[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Warp, blur, add noise drawn from `noise_seed`, clamp to `[0, 1]`. Chroma,
/// if present, is warped and blurred without noise.
pub fn distort_frame(clean: &Frame, tilt: &TiltField, params: &TurbulenceParams, noise_seed: u64) -> Result<Frame> {
    if tilt.dims() != clean.dims() {
        return Err(Error::DimensionMismatch(format!(
            "tilt {:?} vs frame {:?}",
            tilt.dims(),
            clean.dims()
        )));
    }
    let geo = |p: &Array2<f32>| gaussian_blur(&warp(&p.mapv(|v| v as f64), tilt), params.blur_sigma);
    let mut y = geo(&clean.luma);
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        y.mapv_inplace(|v| v + params.noise_sigma * rng.sample::<f64, _>(StandardNormal));
    }
    let to32 = |a: Array2<f64>| a.mapv(|v| v.clamp(0.0, 1.0) as f32);
    let chroma = clean.chroma.as_ref().map(|[cb, cr]| {
        let c = |p: &Array2<f32>| geo(p).mapv(|v| v as f32);
        [c(cb), c(cr)]
    });
    Ok(Frame { luma: to32(y), chroma })
}

/// Distort `n_frames` frames. A single clean frame is replicated; a longer clean
/// sequence is used frame by frame and must have at least `n_frames` frames.
/// Returns `(distorted, clean)` aligned frame for frame.
pub fn synthesize_sequence(
    clean: &FrameSequence,
    n_frames: usize,
    params: &TurbulenceParams,
    seed: u64,
) -> Result<(FrameSequence, FrameSequence)> {
    params.validate()?;
    if n_frames == 0 {
        return Err(Error::InvalidConfig("need at least one frame".into()));
    }
    if clean.len() > 1 && clean.len() < n_frames {
        return Err(Error::LengthMismatch {
            expected: n_frames,
            got: clean.len(),
        });
    }
    let dims = clean.dims();
    let mut tilts = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = random_tilt_field(dims, params, tilts.last(), derive(seed, STREAM_TILT, k as u64));
        tilts.push(t);
    }
    let clean_out: Vec<Frame> = (0..n_frames)
        .map(|k| clean.frame(if clean.len() == 1 { 0 } else { k }).clone())
        .collect();
    let distorted = clean_out
        .iter()
        .zip(&tilts)
        .enumerate()
        .map(|(k, (f, t))| distort_frame(f, t, params, derive(seed, STREAM_NOISE, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((FrameSequence::new(distorted)?, FrameSequence::new(clean_out)?))
}

/// Structured grayscale test image: smooth shading, a bright disc, a dark
/// rectangle and a vertical bar pattern with 8-pixel bars, edges softened by a
/// one-pixel Gaussian.
pub fn test_scene(h: usize, w: usize) -> Array2<f32> {
    let (hf, wf) = (h as f64, w as f64);
    let x = Array2::from_shape_fn((h, w), |(i, j)| {
        let (y, xx) = (i as f64 / hf, j as f64 / wf);
        let mut v = 0.3 + 0.25 * xx + 0.1 * y;
        if (y - 0.35).powi(2) + (xx - 0.3).powi(2) < 0.04 {
            v = 0.9;
        }
        if (0.6..0.85).contains(&y) && (0.15..0.5).contains(&xx) {
            v = 0.1;
        }
        if (0.55..0.9).contains(&xx) && (0.55..0.9).contains(&y) {
            v = if (j / 8) % 2 == 0 { 0.8 } else { 0.25 };
        }
        v
    });
    // anti-aliased edges, as a lens would deliver them
    gaussian_blur(&x, 1.0).mapv(|v| v as f32)
}

//! Quality metrics: temporal background variance plus PSNR and SSIM for runs
//! with known ground truth.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::seqio::{Frame, FrameSequence, MaskSequence};

/// Mean over background pixels of the temporal population variance, on the
/// 0-255 scale. A pixel counts only when at least two frames mark it background.
pub fn background_variance(seq: &FrameSequence, masks: &MaskSequence) -> Result<f64> {
    background_variance_counted(seq, masks).map(|(v, _)| v)
}

/// Same as [`background_variance`], also returning the number of qualifying pixels.
pub fn background_variance_counted(seq: &FrameSequence, masks: &MaskSequence) -> Result<(f64, usize)> {
    if masks.len() != seq.len() {
        return Err(Error::LengthMismatch {
            expected: seq.len(),
            got: masks.len(),
        });
    }
    if masks.dims() != seq.dims() {
        return Err(Error::DimensionMismatch(format!(
            "masks {:?} vs frames {:?}",
            masks.dims(),
            seq.dims()
        )));
    }
    let (h, w) = seq.dims();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut series = Vec::with_capacity(seq.len());
    for i in 0..h {
        for j in 0..w {
            series.clear();
            for (k, f) in seq.frames().iter().enumerate() {
                if masks.get(k)[[i, j]] {
                    // scaled in f32 so 8-bit inputs land back on integers
                    series.push((f.luma[[i, j]] * 255.0) as f64);
                }
            }
            if series.len() < 2 {
                continue;
            }
            let n = series.len() as f64;
            let mean = series.iter().sum::<f64>() / n;
            total += series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoBackground);
    }
    Ok((total / count as f64, count))
}

fn mse(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// PSNR in dB for `[0, 1]` data; identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    psnr_planes(&a.luma, &b.luma)
}

pub fn psnr_planes(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let m = mse(a, b);
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WIN] {
    let r = (SSIM_WIN / 2) as f64;
    let mut k = [0.0; SSIM_WIN];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable filtering, keeping only windows fully inside the image.
fn filter_valid(x: &Array2<f64>, k: &[f64; SSIM_WIN]) -> Array2<f64> {
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - SSIM_WIN, w + 1 - SSIM_WIN);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(i, j)| (0..SSIM_WIN).map(|t| k[t] * x[[i, j + t]]).sum());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..SSIM_WIN).map(|t| k[t] * rows[[i + t, j]]).sum())
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) and
/// dynamic range 1.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_planes(&a.luma, &b.luma)
}

pub fn ssim_planes(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::FrameTooSmall { h, w });
    }
    let k = gaussian_window();
    let a = a.mapv(|v| v as f64);
    let b = b.mapv(|v| v as f64);
    let mu_a = filter_valid(&a, &k);
    let mu_b = filter_valid(&b, &k);
    let aa = filter_valid(&(&a * &a), &k);
    let bb = filter_valid(&(&b * &b), &k);
    let ab = filter_valid(&(&a * &b), &k);
    let mut acc = 0.0;
    for idx in 0..mu_a.len() {
        let (i, j) = (idx / mu_a.ncols(), idx % mu_a.ncols());
        let (ma, mb) = (mu_a[[i, j]], mu_b[[i, j]]);
        let va = aa[[i, j]] - ma * ma;
        let vb = bb[[i, j]] - mb * mb;
        let cov = ab[[i, j]] - ma * mb;
        acc +=
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(acc / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub background_var: f64,
    pub n_background_pixels: usize,
    pub per_frame_psnr: Option<Vec<f64>>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Externally computed blind quality index, if supplied.
    pub biqi: Option<f64>,
}

impl MetricsReport {
    /// Background variance, plus reference metrics when ground truth is given.
    pub fn compute(seq: &FrameSequence, masks: &MaskSequence, reference: Option<&FrameSequence>) -> Result<Self> {
        let (background_var, n_background_pixels) = background_variance_counted(seq, masks)?;
        let mut report = MetricsReport {
            background_var,
            n_background_pixels,
            ..Default::default()
        };
        if let Some(r) = reference {
            if r.len() != seq.len() {
                return Err(Error::LengthMismatch {
                    expected: seq.len(),
                    got: r.len(),
                });
            }
            let psnrs = seq
                .frames()
                .iter()
                .zip(r.frames())
                .map(|(a, b)| psnr(a, b))
                .collect::<Result<Vec<_>>>()?;
            report.mean_psnr = Some(psnrs.iter().sum::<f64>() / psnrs.len() as f64);
            report.per_frame_psnr = Some(psnrs);
            let (h, w) = seq.dims();
            if h >= SSIM_WIN && w >= SSIM_WIN {
                let ssims = seq
                    .frames()
                    .iter()
                    .zip(r.frames())
                    .map(|(a, b)| ssim(a, b))
                    .collect::<Result<Vec<_>>>()?;
                report.mean_ssim = Some(ssims.iter().sum::<f64>() / ssims.len() as f64);
            }
        }
        Ok(report)
    }

    /// `key = value` lines; absent optional values are omitted.
    ///
    /// Keys: `background_var`, `n_background_pixels`, `mean_psnr`, `mean_ssim`,
    /// `biqi`, `psnr.<frame>`.
    pub fn to_kv(&self) -> String {
        let mut s = String::from("# turbdip metrics v1\n");
        writeln!(s, "background_var = {}", self.background_var).unwrap();
        writeln!(s, "n_background_pixels = {}", self.n_background_pixels).unwrap();
        if let Some(v) = self.mean_psnr {
            writeln!(s, "mean_psnr = {v}").unwrap();
        }
        if let Some(v) = self.mean_ssim {
            writeln!(s, "mean_ssim = {v}").unwrap();
        }
        if let Some(v) = self.biqi {
            writeln!(s, "biqi = {v}").unwrap();
        }
        if let Some(p) = &self.per_frame_psnr {
            for (k, v) in p.iter().enumerate() {
                writeln!(s, "psnr.{k} = {v}").unwrap();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(planes: Vec<Array2<f32>>) -> FrameSequence {
        FrameSequence::from_luma(planes).unwrap()
    }

    #[test]
    fn static_sequence_has_zero_variance() {
        let s = seq(vec![array![[0.3, 0.9], [0.1, 0.5]]; 6]);
        let m = MaskSequence::all_background(6, (2, 2));
        assert_eq!(background_variance(&s, &m).unwrap(), 0.0);
    }

    #[test]
    fn two_value_pixel() {
        // one background pixel taking 0 and 2 on the 0-255 scale
        let s = seq(vec![array![[0.0f32]], array![[2.0 / 255.0]]]);
        let m = MaskSequence::all_background(2, (1, 1));
        assert_eq!(background_variance(&s, &m).unwrap(), 1.0);
    }

    #[test]
    fn eight_bit_levels_scale_exactly() {
        for k in 0..=255u8 {
            let v = k as f32 / 255.0;
            assert_eq!(v * 255.0, k as f32);
        }
    }

    #[test]
    fn averages_pixel_variances() {
        // pixel 0: {0, 2} -> 1; pixel 1: {0, 2*sqrt(3)} -> 3
        let d = 2.0 * 3f32.sqrt() / 255.0;
        let s = seq(vec![array![[0.0, 0.0]], array![[2.0 / 255.0, d]]]);
        let m = MaskSequence::all_background(2, (1, 2));
        assert!((background_variance(&s, &m).unwrap() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn pixels_with_one_masked_frame_are_excluded() {
        let s = seq(vec![array![[0.0, 0.0]], array![[1.0, 2.0 / 255.0]]]);
        let masks = MaskSequence::new(vec![array![[true, true]], array![[false, true]]], 2).unwrap();
        let (v, n) = background_variance_counted(&s, &masks).unwrap();
        assert_eq!(n, 1);
        assert_eq!(v, 1.0);
        let none = MaskSequence::new(vec![array![[false, false]]], 2).unwrap();
        assert!(matches!(background_variance(&s, &none), Err(Error::NoBackground)));
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Frame::gray(Array2::from_elem((4, 4), 0.2));
        let b = Frame::gray(Array2::from_elem((4, 4), 0.3));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let z = Frame::gray(Array2::zeros((3, 3)));
        let o = Frame::gray(Array2::ones((3, 3)));
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert_eq!(psnr(&z, &o).unwrap(), psnr(&o, &z).unwrap());
    }

    fn pattern(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(i, j)| ((i * 7 + j * 3) % 16) as f32 / 15.0)
    }

    fn waves(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            (0.5 + 0.4 * (i as f64 * 0.7).sin() * (j as f64 * 0.45).cos()) as f32
        })
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(16, 20);
        let b = waves(16, 20);
        assert!((ssim_planes(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim_planes(&a, &b).unwrap() - ssim_planes(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // frozen from scikit-image structural_similarity(gaussian_weights=True,
        // sigma=1.5, use_sample_covariance=False, data_range=1)
        let a = pattern(16, 20);
        assert!((ssim_planes(&a, &waves(16, 20)).unwrap() - (-0.0208846421570977)).abs() < 1e-6);
        let inv = a.mapv(|v| 1.0 - v);
        let s = ssim_planes(&a, &inv).unwrap();
        assert!(s < 0.5);
        assert!((s - (-0.9896916624279296)).abs() < 1e-6);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let a = Array2::from_elem((12, 12), 0.2f32);
        let b = Array2::from_elem((12, 12), 0.7f32);
        let (x, y) = (0.2f32 as f64, 0.7f32 as f64);
        let expected = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1);
        assert!((ssim_planes(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 0.5283908696472038).abs() < 1e-6);
    }

    #[test]
    fn ssim_too_small() {
        let a = Array2::zeros((10, 30));
        assert!(matches!(ssim_planes(&a, &a), Err(Error::FrameTooSmall { .. })));
    }

    #[test]
    fn report_keys() {
        let s = seq(vec![pattern(12, 12), waves(12, 12)]);
        let m = MaskSequence::all_background(2, (12, 12));
        let r = MetricsReport::compute(&s, &m, Some(&s)).unwrap();
        assert_eq!(r.mean_psnr, Some(f64::INFINITY));
        assert!((r.mean_ssim.unwrap() - 1.0).abs() < 1e-12);
        let kv = r.to_kv();
        assert!(kv.contains("background_var = "));
        assert!(kv.contains("psnr.1 = inf"));
        assert!(!kv.contains("biqi"));
    }
}

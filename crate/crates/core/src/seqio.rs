//! Image sequence and mask I/O.
//!
//! Frames are held as single-channel luma in `[0, 1]`. Color inputs are split
//! into BT.601 luma plus the two color-difference planes, which ride along
//! untouched so they can be put back after restoration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};

const KR: f32 = 0.299;
const KG: f32 = 0.587;
const KB: f32 = 0.114;

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub luma: Array2<f32>,
    /// `[Cb, Cr]` color-difference planes, kept only for recombination.
    pub chroma: Option<[Array2<f32>; 2]>,
}

impl Frame {
    pub fn gray(luma: Array2<f32>) -> Self {
        Frame { luma, chroma: None }
    }

    pub fn height(&self) -> usize {
        self.luma.nrows()
    }

    pub fn width(&self) -> usize {
        self.luma.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.luma.dim()
    }

    /// Split 8-bit RGB into luma and color-difference planes.
    pub fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Self {
        let mut y = Array2::zeros((h, w));
        let mut cb = Array2::zeros((h, w));
        let mut cr = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let o = 3 * (i * w + j);
                let r = rgb[o] as f32 / 255.0;
                let g = rgb[o + 1] as f32 / 255.0;
                let b = rgb[o + 2] as f32 / 255.0;
                let l = KR * r + KG * g + KB * b;
                y[[i, j]] = l;
                cb[[i, j]] = (b - l) / (2.0 * (1.0 - KB));
                cr[[i, j]] = (r - l) / (2.0 * (1.0 - KR));
            }
        }
        Frame {
            luma: y,
            chroma: Some([cb, cr]),
        }
    }

    /// Inverse of [`Frame::from_rgb8`] on the float planes; `None` for gray frames.
    pub fn to_rgb(&self) -> Option<Vec<[f32; 3]>> {
        let [cb, cr] = self.chroma.as_ref()?;
        let px = self
            .luma
            .iter()
            .zip(cb.iter().zip(cr.iter()))
            .map(|(&l, (&cb, &cr))| {
                let r = l + 2.0 * (1.0 - KR) * cr;
                let b = l + 2.0 * (1.0 - KB) * cb;
                let g = (l - KR * r - KB * b) / KG;
                [r, g, b]
            })
            .collect();
        Some(px)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::DimensionMismatch("empty frame sequence".into()))?;
        let dims = first.dims();
        let colored = first.chroma.is_some();
        for (k, f) in frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "frame {k} is {:?}, frame 0 is {:?}",
                    f.dims(),
                    dims
                )));
            }
            if f.chroma.is_some() != colored {
                return Err(Error::DimensionMismatch(format!(
                    "frame {k}: chroma must be present for all frames or none"
                )));
            }
            if let Some([cb, cr]) = &f.chroma {
                if cb.dim() != dims || cr.dim() != dims {
                    return Err(Error::DimensionMismatch(format!("frame {k}: chroma dims")));
                }
            }
            if f.luma.iter().any(|v| !v.is_finite()) {
                return Err(Error::DimensionMismatch(format!("frame {k}: non-finite luma")));
            }
        }
        Ok(FrameSequence {
            frames,
            frame_rate: None,
        })
    }

    /// Grayscale sequence from luma planes.
    pub fn from_luma(planes: Vec<Array2<f32>>) -> Result<Self> {
        Self::new(planes.into_iter().map(Frame::gray).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn has_chroma(&self) -> bool {
        self.frames[0].chroma.is_some()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Frame {
        &self.frames[k]
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

/// Background masks; `true` marks a background pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSequence {
    masks: Vec<Array2<bool>>,
    len: usize,
}

impl MaskSequence {
    /// Per-frame masks, or a single mask broadcast to `len` frames.
    pub fn new(masks: Vec<Array2<bool>>, len: usize) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::DimensionMismatch("no masks".into()));
        }
        if masks.len() != 1 && masks.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "{} masks for {len} frames (need 1 or {len})",
                masks.len()
            )));
        }
        let dims = masks[0].dim();
        if masks.iter().any(|m| m.dim() != dims) {
            return Err(Error::DimensionMismatch("masks differ in size".into()));
        }
        Ok(MaskSequence { masks, len })
    }

    pub fn all_background(len: usize, dims: (usize, usize)) -> Self {
        MaskSequence {
            masks: vec![Array2::from_elem(dims, true)],
            len,
        }
    }

    /// Logical length after broadcast.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dim()
    }

    pub fn get(&self, k: usize) -> &Array2<bool> {
        if self.masks.len() == 1 {
            &self.masks[0]
        } else {
            &self.masks[k]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Png8,
    Pgm8,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Png8 => "png",
            OutputFormat::Pgm8 => "pgm",
        }
    }
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Resolve a directory, a glob pattern or a single file into sorted image paths.
pub fn resolve_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let path = Path::new(pattern);
    let mut paths: Vec<PathBuf> = if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut v = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.is_file() && has_image_extension(&p) {
                v.push(p);
            }
        }
        v
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let entries = glob::glob(pattern).map_err(|e| Error::InvalidConfig(format!("bad pattern {pattern}: {e}")))?;
        entries.filter_map(|r| r.ok()).filter(|p| p.is_file()).collect()
    };
    if paths.is_empty() {
        return Err(Error::NoFilesMatched(pattern.to_string()));
    }
    paths.sort();
    Ok(paths)
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn decode_frame(path: &Path) -> Result<Frame> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Ok(Frame::gray(luma_plane(h, w, buf.as_raw(), 1))),
        DynamicImage::ImageLumaA8(buf) => Ok(Frame::gray(luma_plane(h, w, buf.as_raw(), 2))),
        DynamicImage::ImageRgb8(buf) => Ok(Frame::from_rgb8(h, w, buf.as_raw())),
        DynamicImage::ImageRgba8(buf) => {
            let rgb: Vec<u8> = buf.as_raw().chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
            Ok(Frame::from_rgb8(h, w, &rgb))
        }
        other => Err(Error::Image {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported pixel format {:?}: only 8-bit images are accepted",
                other.color()
            ),
        }),
    }
}

fn luma_plane(h: usize, w: usize, raw: &[u8], stride: usize) -> Array2<f32> {
    Array2::from_shape_fn((h, w), |(i, j)| raw[(i * w + j) * stride] as f32 / 255.0)
}

/// Load frames from a directory, glob or single file, in lexicographic filename order.
pub fn load_sequence(pattern: &str) -> Result<FrameSequence> {
    let paths = resolve_paths(pattern)?;
    let mut frames = Vec::with_capacity(paths.len());
    let mut dims = None;
    for p in &paths {
        let f = decode_frame(p)?;
        match dims {
            None => dims = Some(f.dims()),
            Some(d) if d != f.dims() => {
                return Err(Error::Image {
                    path: p.clone(),
                    reason: format!("size {:?} differs from first frame {:?}", f.dims(), d),
                })
            }
            _ => {}
        }
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.chroma.is_some() != f.chroma.is_some() {
                return Err(Error::Image {
                    path: p.clone(),
                    reason: "mixed grayscale and color frames".into(),
                });
            }
        }
        frames.push(f);
    }
    FrameSequence::new(frames)
}

/// Restored luma with the original chroma planes copied back, frame by frame.
pub fn recombine_color(restored: &FrameSequence, original: &FrameSequence) -> Result<FrameSequence> {
    if restored.len() != original.len() {
        return Err(Error::LengthMismatch {
            expected: original.len(),
            got: restored.len(),
        });
    }
    if restored.dims() != original.dims() {
        return Err(Error::DimensionMismatch(format!(
            "restored {:?} vs original {:?}",
            restored.dims(),
            original.dims()
        )));
    }
    if !original.has_chroma() {
        return Err(Error::DimensionMismatch("original sequence carries no chroma".into()));
    }
    let frames = restored
        .frames()
        .iter()
        .zip(original.frames())
        .map(|(r, o)| Frame {
            luma: r.luma.clone(),
            chroma: o.chroma.clone(),
        })
        .collect();
    let mut out = FrameSequence::new(frames)?;
    out.frame_rate = original.frame_rate;
    Ok(out)
}

/// Load background masks: white (>= 128) marks background.
pub fn load_masks(pattern: &str, seq: &FrameSequence) -> Result<MaskSequence> {
    let paths = resolve_paths(pattern)?;
    let mut masks = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = open_image(p)?;
        let gray = match img {
            DynamicImage::ImageLuma8(buf) => buf,
            other => {
                return Err(Error::Image {
                    path: p.clone(),
                    reason: format!("mask must be 8-bit single channel, got {:?}", other.color()),
                })
            }
        };
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        if (h, w) != seq.dims() {
            return Err(Error::Image {
                path: p.clone(),
                reason: format!("mask size {:?} differs from frames {:?}", (h, w), seq.dims()),
            });
        }
        let raw = gray.as_raw();
        masks.push(Array2::from_shape_fn((h, w), |(i, j)| raw[i * w + j] >= 128));
    }
    MaskSequence::new(masks, seq.len())
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn frame_file_name(index: usize, format: OutputFormat) -> String {
    format!("frame_{index:05}.{}", format.extension())
}

/// Write one file per frame as `frame_00000.<ext>`. Color frames become RGB PNGs;
/// PGM output always carries luma only.
pub fn write_sequence(seq: &FrameSequence, out_dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (h, w) = seq.dims();
    let mut written = Vec::with_capacity(seq.len());
    for (k, frame) in seq.frames().iter().enumerate() {
        let path = out_dir.join(frame_file_name(k, format));
        let luma: Vec<u8> = frame.luma.iter().map(|&v| quantize(v)).collect();
        match format {
            OutputFormat::Pgm8 => {
                let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
                bytes.extend_from_slice(&luma);
                let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            }
            OutputFormat::Png8 => {
                let res = match frame.to_rgb() {
                    Some(rgb) => {
                        let raw: Vec<u8> = rgb.iter().flat_map(|p| p.map(quantize)).collect();
                        RgbImage::from_raw(w as u32, h as u32, raw)
                            .expect("buffer size")
                            .save(&path)
                    }
                    None => GrayImage::from_raw(w as u32, h as u32, luma)
                        .expect("buffer size")
                        .save(&path),
                };
                res.map_err(|e| Error::Image {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    fn write_gray(path: &Path, h: u32, w: u32, v: u8) {
        ImageBuffer::<Luma<u8>, _>::from_pixel(w, h, Luma([v]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn loads_directory_of_constant_gray() {
        let dir = tempfile::tempdir().unwrap();
        for k in 0..5 {
            write_gray(&dir.path().join(format!("f{k}.png")), 8, 8, 128);
        }
        let seq = load_sequence(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(seq.len(), 5);
        assert!(!seq.has_chroma());
        for f in seq.frames() {
            assert!(f.luma.iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-7));
        }
    }

    #[test]
    fn red_pixel_luma_is_bt601_weight() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        ImageBuffer::<Rgb<u8>, _>::from_pixel(2, 2, Rgb([255, 0, 0]))
            .save(&p)
            .unwrap();
        let seq = load_sequence(p.to_str().unwrap()).unwrap();
        assert!((seq.frame(0).luma[[0, 0]] - 0.299).abs() < 1.0 / 255.0);
        assert!(seq.has_chroma());
        let rgb = seq.frame(0).to_rgb().unwrap();
        assert!((rgb[0][0] - 1.0).abs() < 1e-5 && rgb[0][1].abs() < 1e-5 && rgb[0][2].abs() < 1e-5);
    }

    #[test]
    fn empty_directory_is_no_files_matched() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sequence(dir.path().to_str().unwrap()).unwrap_err();
        assert!(err.to_string().contains("no files matched"), "{err}");
    }

    #[test]
    fn mixed_dimensions_name_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("a.png"), 8, 8, 0);
        write_gray(&dir.path().join("b.png"), 8, 9, 0);
        let err = load_sequence(dir.path().to_str().unwrap()).unwrap_err();
        assert!(err.to_string().contains("b.png"), "{err}");
    }

    #[test]
    fn undecodable_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
        let err = load_sequence(dir.path().to_str().unwrap()).unwrap_err();
        assert!(err.to_string().contains("junk.png"), "{err}");
    }

    #[test]
    fn sixteen_bit_input_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        ImageBuffer::<Luma<u16>, _>::from_pixel(4, 4, Luma([1000u16]))
            .save(&p)
            .unwrap();
        let err = load_sequence(p.to_str().unwrap()).unwrap_err();
        assert!(err.to_string().contains("8-bit"), "{err}");
    }

    #[test]
    fn glob_pattern_orders_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        write_gray(&dir.path().join("b.png"), 2, 2, 20);
        write_gray(&dir.path().join("a.png"), 2, 2, 10);
        write_gray(&dir.path().join("c.txt.png"), 2, 2, 30);
        let pattern = format!("{}/*.png", dir.path().display());
        let seq = load_sequence(&pattern).unwrap();
        let firsts: Vec<u8> = seq.frames().iter().map(|f| quantize(f.luma[[0, 0]])).collect();
        assert_eq!(firsts, vec![10, 20, 30]);
    }

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn writes_zero_padded_names_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_luma(vec![Array2::from_elem((3, 4), 0.5); 2]).unwrap();
        for fmt in [OutputFormat::Png8, OutputFormat::Pgm8] {
            let out = dir.path().join(fmt.extension());
            let files = write_sequence(&seq, &out, fmt).unwrap();
            assert_eq!(files[1].file_name().unwrap().to_str().unwrap(), frame_file_name(1, fmt));
            let back = load_sequence(out.to_str().unwrap()).unwrap();
            assert_eq!(back.dims(), (3, 4));
            assert!(back.frame(0).luma.iter().all(|&v| quantize(v) == 128));
        }
        let raw = fs::read(dir.path().join("pgm").join("frame_00000.pgm")).unwrap();
        assert!(raw.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(raw.len(), 11 + 12);
    }

    #[test]
    fn recombine_keeps_restored_luma_and_original_chroma() {
        let mut orig = Frame::from_rgb8(2, 2, &[200, 10, 30, 0, 0, 255, 10, 200, 10, 90, 90, 90]);
        orig.luma.fill(0.3);
        let original = FrameSequence::new(vec![orig.clone()]).unwrap();
        let restored = FrameSequence::from_luma(vec![Array2::from_elem((2, 2), 0.5)]).unwrap();
        let out = recombine_color(&restored, &original).unwrap();
        assert!(out.frame(0).luma.iter().all(|&v| v == 0.5));
        assert_eq!(out.frame(0).chroma, orig.chroma);
    }

    #[test]
    fn recombine_identity_on_same_sequence() {
        let f = Frame::from_rgb8(1, 2, &[1, 2, 3, 250, 100, 0]);
        let s = FrameSequence::new(vec![f]).unwrap();
        let out = recombine_color(&s, &s).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn recombine_rejects_chromaless_original_and_mismatch() {
        let g = FrameSequence::from_luma(vec![Array2::zeros((2, 2))]).unwrap();
        assert!(recombine_color(&g, &g).is_err());
        let c = FrameSequence::new(vec![Frame::from_rgb8(2, 2, &[0; 12]); 2]).unwrap();
        assert!(recombine_color(&g, &c).is_err());
    }

    #[test]
    fn masks_threshold_and_broadcast() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_luma(vec![Array2::zeros((4, 4)); 10]).unwrap();
        let white = dir.path().join("white.png");
        write_gray(&white, 4, 4, 255);
        let m = load_masks(white.to_str().unwrap(), &seq).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.get(9).iter().all(|&b| b));

        let black = dir.path().join("black.png");
        write_gray(&black, 4, 4, 0);
        let m = load_masks(black.to_str().unwrap(), &seq).unwrap();
        assert!(m.get(3).iter().all(|&b| !b));

        let thresh = dir.path().join("t.png");
        write_gray(&thresh, 4, 4, 128);
        assert!(load_masks(thresh.to_str().unwrap(), &seq).unwrap().get(0)[[0, 0]]);
        write_gray(&thresh, 4, 4, 127);
        assert!(!load_masks(thresh.to_str().unwrap(), &seq).unwrap().get(0)[[0, 0]]);
    }

    #[test]
    fn mask_count_and_size_checked() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_luma(vec![Array2::zeros((4, 4)); 3]).unwrap();
        write_gray(&dir.path().join("m0.png"), 4, 4, 255);
        write_gray(&dir.path().join("m1.png"), 4, 4, 255);
        assert!(load_masks(dir.path().to_str().unwrap(), &seq).is_err());
        let big = dir.path().join("big");
        fs::create_dir(&big).unwrap();
        write_gray(&big.join("m.png"), 5, 4, 255);
        assert!(load_masks(big.to_str().unwrap(), &seq).is_err());
    }

    #[test]
    fn sequence_invariants() {
        assert!(FrameSequence::new(vec![]).is_err());
        assert!(FrameSequence::from_luma(vec![Array2::zeros((2, 2)), Array2::zeros((2, 3))]).is_err());
        let mixed = vec![Frame::gray(Array2::zeros((1, 1))), Frame::from_rgb8(1, 1, &[0, 0, 0])];
        assert!(FrameSequence::new(mixed).is_err());
    }
}

//! Temporal interlacing of a block of frames into one mosaic image.
//!
//! Frame `k = dy * g_x + dx` of a block lands on row offset `dy` and column offset
//! `dx` of every `g_y x g_x` tile, so pixel `(i, j)` of all frames shares the tile
//! at `(i * g_y, j * g_x)`. The rearrangement is a bijection without padding.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MosaicGrid {
    pub g_y: usize,
    pub g_x: usize,
}

impl MosaicGrid {
    pub fn new(g_y: usize, g_x: usize) -> Result<Self> {
        if g_y == 0 || g_x == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid factors must be positive, got {g_y}x{g_x}"
            )));
        }
        Ok(MosaicGrid { g_y, g_x })
    }

    pub fn block_size(&self) -> usize {
        self.g_y * self.g_x
    }
}

impl std::fmt::Display for MosaicGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.g_y, self.g_x)
    }
}

impl std::str::FromStr for MosaicGrid {
    type Err = Error;

    /// Parses `GYxGX`, e.g. `5x1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("grid must look like GYxGX, got {s:?}"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let g_y = a.trim().parse().map_err(|_| bad())?;
        let g_x = b.trim().parse().map_err(|_| bad())?;
        MosaicGrid::new(g_y, g_x)
    }
}

/// Most-square factorization of `t`, with `g_y >= g_x`. Prime `t` gives `(t, 1)`.
pub fn grid_for_block_size(t: usize) -> MosaicGrid {
    assert!(t >= 1, "block size must be positive");
    let mut g_x = 1;
    let mut d = 1;
    while d * d <= t {
        if t.is_multiple_of(d) {
            g_x = d;
        }
        d += 1;
    }
    MosaicGrid { g_y: t / g_x, g_x }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic<S> {
    pub data: Array2<S>,
    pub grid: MosaicGrid,
    /// `(T, h, w)` of the block the mosaic was built from.
    pub block_dims: (usize, usize, usize),
}

impl<S: Copy> Mosaic<S> {
    /// Wrap a raw `(h * g_y) x (w * g_x)` array.
    pub fn from_raw(data: Array2<S>, grid: MosaicGrid) -> Result<Self> {
        let (mh, mw) = data.dim();
        if mh % grid.g_y != 0 || mw % grid.g_x != 0 {
            return Err(Error::DimensionMismatch(format!(
                "mosaic {mh}x{mw} not divisible by grid {grid}"
            )));
        }
        Ok(Mosaic {
            data,
            grid,
            block_dims: (grid.block_size(), mh / grid.g_y, mw / grid.g_x),
        })
    }
}

pub fn shuffle_block<S: Copy>(frames: &[Array2<S>], grid: MosaicGrid) -> Result<Mosaic<S>> {
    if frames.len() != grid.block_size() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames for grid {grid}",
            frames.len()
        )));
    }
    let (h, w) = frames[0].dim();
    if frames.iter().any(|f| f.dim() != (h, w)) {
        return Err(Error::DimensionMismatch("block frames differ in size".into()));
    }
    let (gy, gx) = (grid.g_y, grid.g_x);
    let data = Array2::from_shape_fn((h * gy, w * gx), |(r, c)| {
        let (i, dy) = (r / gy, r % gy);
        let (j, dx) = (c / gx, c % gx);
        frames[dy * gx + dx][[i, j]]
    });
    Ok(Mosaic {
        data,
        grid,
        block_dims: (frames.len(), h, w),
    })
}

pub fn unshuffle_mosaic<S: Copy>(m: &Mosaic<S>) -> Result<Vec<Array2<S>>> {
    unshuffle(&m.data, m.grid)
}

/// Inverse of [`shuffle_block`] on a raw array.
pub fn unshuffle<S: Copy>(data: &Array2<S>, grid: MosaicGrid) -> Result<Vec<Array2<S>>> {
    let (mh, mw) = data.dim();
    let (gy, gx) = (grid.g_y, grid.g_x);
    if mh % gy != 0 || mw % gx != 0 {
        return Err(Error::DimensionMismatch(format!(
            "mosaic {mh}x{mw} not divisible by grid {grid}"
        )));
    }
    let (h, w) = (mh / gy, mw / gx);
    Ok((0..gy * gx)
        .map(|k| {
            let (dy, dx) = (k / gx, k % gx);
            Array2::from_shape_fn((h, w), |(i, j)| data[[i * gy + dy, j * gx + dx]])
        })
        .collect())
}

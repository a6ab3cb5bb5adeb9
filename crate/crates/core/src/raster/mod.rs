//! Discrete sampling of the continuous image plane.
//!
//! A grid of `width_px x height_px` samples places sample `(i, j)` at the
//! plane point `(i, j)`, so the grid covers `[0, w] x [0, h]` in unit lengths.

mod formats;

pub use formats::{read_grid, read_pgm, write_grid, write_pgm, PgmEncoding};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PlaneSize, Point, Transform2D};

/// How samples backtracked outside the source extent are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BorderPolicy {
    /// Out-of-range support nodes read as zero.
    #[default]
    ZeroFill,
    /// Out-of-range support nodes read the nearest edge node.
    ClampToEdge,
}

/// Row-major, channel-interleaved grid of finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    size: PlaneSize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(size: PlaneSize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("grid needs at least one channel"));
        }
        let expected = size.len() * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{size} x {channels} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite grid value at index {i}")));
        }
        Ok(Self {
            size,
            channels,
            data,
        })
    }

    pub fn zeros(size: PlaneSize, channels: usize) -> Self {
        assert!(channels > 0, "grid needs at least one channel");
        Self {
            size,
            channels,
            data: vec![0.0; size.len() * channels],
        }
    }

    /// Builds a grid by evaluating `f(x, y, channel)` at every node.
    ///
    /// Panics if `f` returns a non-finite value.
    pub fn from_fn(
        size: PlaneSize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut grid = Self::zeros(size, channels);
        let w = size.width_px() as usize;
        for y in 0..size.height_px() as usize {
            for x in 0..w {
                for c in 0..channels {
                    let v = f(x, y, c);
                    assert!(v.is_finite(), "non-finite value at ({x}, {y}, {c})");
                    grid.data[(y * w + x) * channels + c] = v;
                }
            }
        }
        grid
    }

    /// Stacks single-channel grids of equal size into one multi-channel grid.
    pub fn stack(planes: &[&ImageGrid]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero grids"))?;
        let channels: usize = planes.iter().map(|g| g.channels).sum();
        let mut data = Vec::with_capacity(first.size.len() * channels);
        for g in planes {
            if g.size != first.size {
                return Err(Error::DimensionMismatch(format!(
                    "cannot stack {} with {}",
                    g.size, first.size
                )));
            }
        }
        for node in 0..first.size.len() {
            for g in planes {
                data.extend_from_slice(&g.data[node * g.channels..(node + 1) * g.channels]);
            }
        }
        Ok(Self {
            size: first.size,
            channels,
            data,
        })
    }

    pub fn size(&self) -> PlaneSize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.size.width_px() as usize
    }

    pub fn height(&self) -> usize {
        self.size.height_px() as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width() + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    /// Panics on non-finite `v`.
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        assert!(v.is_finite(), "non-finite value at ({x}, {y}, {c})");
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    /// Copies one channel out as a single-channel grid.
    pub fn channel(&self, c: usize) -> ImageGrid {
        assert!(c < self.channels, "channel {c} out of range");
        Self {
            size: self.size,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Element-wise mean of two grids of identical shape.
    pub fn average(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.check_same_shape(other)?;
        Ok(Self {
            size: self.size,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self {
            size: self.size,
            channels: self.channels,
            data,
        }
    }

    pub(crate) fn check_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.size != other.size || self.channels != other.channels {
            return Err(Error::DimensionMismatch(format!(
                "{} x {} vs {} x {}",
                self.size, self.channels, other.size, other.channels
            )));
        }
        Ok(())
    }

    /// Bilinear interpolation at `p`; see [`bilinear_sample`].
    pub fn sample_into(&self, p: Point, policy: BorderPolicy, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let (w, h) = (self.width() as i64, self.height() as i64);
        let x0 = p.x.floor();
        let y0 = p.y.floor();
        let fx = p.x - x0;
        let fy = p.y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);

        out.fill(0.0);
        let support = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (sx, sy, weight) in support {
            let (sx, sy) = match policy {
                BorderPolicy::ZeroFill => {
                    if sx < 0 || sy < 0 || sx >= w || sy >= h {
                        continue;
                    }
                    (sx, sy)
                }
                BorderPolicy::ClampToEdge => (sx.clamp(0, w - 1), sy.clamp(0, h - 1)),
            };
            let base = self.index(sx as usize, sy as usize, 0);
            for (o, v) in out.iter_mut().zip(&self.data[base..base + self.channels]) {
                *o += weight * v;
            }
        }
    }
}

/// Bilinear interpolation of every channel at `p` from the (up to) four
/// surrounding nodes. At an in-bounds node the stored value is returned
/// exactly.
pub fn bilinear_sample(grid: &ImageGrid, p: Point, policy: BorderPolicy) -> Vec<f64> {
    let mut out = vec![0.0; grid.channels()];
    grid.sample_into(p, policy, &mut out);
    out
}

/// Resamples `src` into a `dst_size` grid whose node `p_d` takes the value of
/// `src` at `t^-1 p_d`.
pub fn warp(
    src: &ImageGrid,
    t: &Transform2D,
    dst_size: PlaneSize,
    policy: BorderPolicy,
) -> Result<ImageGrid> {
    let inv = t.invert()?;
    let channels = src.channels();
    let dst_w = dst_size.width_px() as usize;
    let mut data = vec![0.0; dst_size.len() * channels];
    data.par_chunks_mut(dst_w * channels)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.chunks_mut(channels).enumerate() {
                let p = inv.apply(Point::new(x as f64, y as f64));
                src.sample_into(p, policy, out);
            }
        });
    Ok(ImageGrid {
        size: dst_size,
        channels,
        data,
    })
}

/// Reverses the column order of every channel, i.e. the flip about the
/// vertical center line specialised to grid nodes.
pub fn flip_heatmap(grid: &ImageGrid) -> ImageGrid {
    let (w, c) = (grid.width(), grid.channels());
    let mut data = Vec::with_capacity(grid.data.len());
    for row in grid.data.chunks(w * c) {
        for node in row.chunks(c).rev() {
            data.extend_from_slice(node);
        }
    }
    ImageGrid {
        size: grid.size,
        channels: c,
        data,
    }
}

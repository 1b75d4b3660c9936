//! Dense row-major 2-D grids of `f64`, used for images, saliency maps and
//! class activation maps alike.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput(format!("grid of size {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{} values for {width}x{height}", width * height),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_shape(&self, other: &Grid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coordinates of the first maximal value in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn crop(&self, bx: &CropBox) -> Result<Grid> {
        if bx.width == 0
            || bx.height == 0
            || bx.x + bx.width > self.width
            || bx.y + bx.height > self.height
        {
            return Err(Error::OutOfBounds(format!(
                "crop {bx:?} outside {}x{} source",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(bx.width, bx.height, |x, y| {
            self.get(bx.x + x, bx.y + y)
        }))
    }

    /// Separable bilinear (triangle filter) resampling. When shrinking, the
    /// filter support widens with the reduction factor so every source pixel
    /// contributes; when the size is unchanged this is the identity.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Grid> {
        if width == 0 || height == 0 {
            return Err(Error::OutOfRange(format!(
                "target size {width}x{height} must be at least 1x1"
            )));
        }
        let wx = triangle_weights(self.width, width);
        let wy = triangle_weights(self.height, height);

        // Horizontal pass: height x width_out.
        let mut tmp = vec![0.0; self.height * width];
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            for (x, taps) in wx.iter().enumerate() {
                tmp[y * width + x] = taps.iter().map(|&(j, w)| row[j] * w).sum();
            }
        }
        let mut out = vec![0.0; width * height];
        for (y, taps) in wy.iter().enumerate() {
            for x in 0..width {
                out[y * width + x] = taps.iter().map(|&(j, w)| tmp[j * width + x] * w).sum();
            }
        }
        Grid::new(width, height, out)
    }
}

/// Integer pixel rectangle, origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    pub fn full(grid: &Grid) -> Self {
        Self {
            x: 0,
            y: 0,
            width: grid.width(),
            height: grid.height(),
        }
    }
}

fn triangle_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor() as isize).max(0) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut taps: Vec<(usize, f64)> = (lo..hi)
                .filter_map(|j| {
                    let d = (j as f64 + 0.5 - center) / filter_scale;
                    let w = 1.0 - d.abs();
                    (w > 0.0).then_some((j, w))
                })
                .collect();
            if taps.is_empty() {
                // Only reachable for degenerate upsampling at the border.
                let j = (center.floor() as usize).min(in_len - 1);
                taps.push((j, 1.0));
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

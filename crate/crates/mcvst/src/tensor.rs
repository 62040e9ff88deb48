//! Dense channel-major real and integer grids (features, latents).

use crate::error::{Error, Result};

/// Real-valued grid of shape channels x h x w, channel-major raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn from_data(channels: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * h * w {
            return Err(Error::InvalidInput(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                h,
                w
            )));
        }
        Ok(Self {
            channels,
            h,
            w,
            data,
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Slice holding one channel plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.channels == other.channels && self.h == other.h && self.w == other.w
    }
}

/// Integer-valued grid, same layout as [`Tensor3`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntGrid {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<i32>,
}

impl IntGrid {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self {
            channels,
            h,
            w,
            data: vec![0; channels * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn channel(&self, c: usize) -> &[i32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }
}

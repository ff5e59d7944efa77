//! Minimal owned image buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(contract!(
                "raw buffer has {} bytes, expected {}x{}x3",
                data.len(),
                width,
                height
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Copies the `w`×`h` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(contract!(
                "crop {}x{}+{}+{} exceeds {}x{}",
                w,
                h,
                x0,
                y0,
                self.width,
                self.height
            ));
        }
        let mut out = Self::new(w, h, [0; 3]);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * w * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        Ok(out)
    }

    /// Channel values scaled to `[0, 1]`, one plane per channel.
    pub fn to_planes(&self) -> [Plane; 3] {
        let mut planes = [
            Plane::zeros(self.width, self.height),
            Plane::zeros(self.width, self.height),
            Plane::zeros(self.width, self.height),
        ];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c].data[i] = f64::from(px[c]) / 255.0;
            }
        }
        planes
    }

    /// BT.601 luma in `[0, 1]`.
    pub fn luma(&self) -> Plane {
        let mut out = Plane::zeros(self.width, self.height);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out.data[i] = (0.299 * f64::from(px[0])
                + 0.587 * f64::from(px[1])
                + 0.114 * f64::from(px[2]))
                / 255.0;
        }
        out
    }

    /// Maps `[-1, 1]` CHW floats back to 8-bit with rounding and clamping.
    pub fn from_signed_chw(width: usize, height: usize, chw: &[f32]) -> Result<Self> {
        let n = width * height;
        if chw.len() != 3 * n {
            return Err(contract!(
                "expected {} values for a 3x{}x{} image, got {}",
                3 * n,
                height,
                width,
                chw.len()
            ));
        }
        let mut data = vec![0u8; 3 * n];
        for c in 0..3 {
            for i in 0..n {
                let v = (chw[c * n + i] + 1.0) * 127.5;
                data[i * 3 + c] = libm::roundf(v.clamp(0.0, 255.0)) as u8;
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// CHW floats in `[-1, 1]`.
    pub fn to_signed_chw(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0f32; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = f32::from(px[c]) / 127.5 - 1.0;
            }
        }
        out
    }
}

/// Single-channel `f64` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(contract!(
                "plane buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 2×2 box-filter downsample; a trailing odd row/column is dropped.
    pub fn downsample2(&self) -> Plane {
        let w = self.width / 2;
        let h = self.height / 2;
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = 0.25
                    * (self.at(2 * x, 2 * y)
                        + self.at(2 * x + 1, 2 * y)
                        + self.at(2 * x, 2 * y + 1)
                        + self.at(2 * x + 1, 2 * y + 1));
            }
        }
        out
    }

    pub fn mul(&self, other: &Plane) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

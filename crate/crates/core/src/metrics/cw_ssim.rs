//! Complex-wavelet SSIM over a separable complex Gabor filter bank.
//!
//! Band `(level, k)` filters the luma image, box-downsampled `level` times,
//! with `g(n, m) = e(n)·e(m)·exp(iω(n·cos θ_k + m·sin θ_k))` where `e` is a
//! normalised Gaussian envelope and `θ_k = kπ/K`. Within each `window ×
//! window` neighbourhood of coefficients the index is
//! `(2|Σ c_x c̄_y| + K) / (Σ|c_x|² + Σ|c_y|² + K)`; band scores are
//! neighbourhood means and the result is the mean over bands.

use alloc::vec::Vec;
use core::f64::consts::PI;

use super::filter::gaussian_window;
use super::report::pairwise_sum;
use crate::error::{contract, Result};
use crate::image::{Plane, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwSsimConfig {
    pub levels: usize,
    pub orientations: usize,
    /// Odd Gabor kernel length.
    pub kernel_size: usize,
    pub envelope_sigma: f64,
    /// Carrier frequency ω in radians per pixel.
    pub frequency: f64,
    pub window: usize,
    pub k: f64,
}

impl Default for CwSsimConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            orientations: 4,
            kernel_size: 7,
            envelope_sigma: 1.5,
            frequency: PI / 2.0,
            window: 7,
            k: 0.01,
        }
    }
}

type Complex = (f64, f64);

#[inline]
fn cmul(a: Complex, b: Complex) -> Complex {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Horizontal and vertical 1D factors of the Gabor kernel at `theta`.
pub fn gabor_kernel(cfg: &CwSsimConfig, theta: f64) -> (Vec<Complex>, Vec<Complex>) {
    let env = gaussian_window(cfg.kernel_size, cfg.envelope_sigma);
    let r = (cfg.kernel_size / 2) as f64;
    let factor = |freq: f64| -> Vec<Complex> {
        env.iter()
            .enumerate()
            .map(|(i, e)| {
                let phase = freq * (i as f64 - r);
                (e * libm::cos(phase), e * libm::sin(phase))
            })
            .collect()
    };
    (
        factor(cfg.frequency * libm::cos(theta)),
        factor(cfg.frequency * libm::sin(theta)),
    )
}

struct Band {
    width: usize,
    height: usize,
    data: Vec<Complex>,
}

fn filter_band(plane: &Plane, gx: &[Complex], gy: &[Complex]) -> Band {
    let k = gx.len();
    let ow = plane.width + 1 - k;
    let oh = plane.height + 1 - k;
    let mut rows = alloc::vec![(0.0, 0.0); ow * plane.height];
    for y in 0..plane.height {
        for x in 0..ow {
            let mut acc = (0.0, 0.0);
            for (n, g) in gx.iter().enumerate() {
                let v = plane.data[y * plane.width + x + n];
                acc.0 += g.0 * v;
                acc.1 += g.1 * v;
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut data = alloc::vec![(0.0, 0.0); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = (0.0, 0.0);
            for (m, g) in gy.iter().enumerate() {
                let p = cmul(*g, rows[(y + m) * ow + x]);
                acc.0 += p.0;
                acc.1 += p.1;
            }
            data[y * ow + x] = acc;
        }
    }
    Band {
        width: ow,
        height: oh,
        data,
    }
}

fn band_index(bx: &Band, by: &Band, window: usize, k: f64) -> f64 {
    let ow = bx.width + 1 - window;
    let oh = bx.height + 1 - window;
    let mut scores = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let (mut cross_re, mut cross_im, mut ex, mut ey) = (0.0, 0.0, 0.0, 0.0);
            for dy in 0..window {
                for dx in 0..window {
                    let i = (y + dy) * bx.width + x + dx;
                    let (a, b) = (bx.data[i], by.data[i]);
                    // c_x · conj(c_y)
                    cross_re += a.0 * b.0 + a.1 * b.1;
                    cross_im += a.1 * b.0 - a.0 * b.1;
                    ex += a.0 * a.0 + a.1 * a.1;
                    ey += b.0 * b.0 + b.1 * b.1;
                }
            }
            let modulus = libm::hypot(cross_re, cross_im);
            scores.push((2.0 * modulus + k) / (ex + ey + k));
        }
    }
    pairwise_sum(&scores) / scores.len() as f64
}

pub fn cw_ssim_planes(x: &Plane, y: &Plane, cfg: &CwSsimConfig) -> Result<f64> {
    if x.width != y.width || x.height != y.height {
        return Err(contract!("CW-SSIM inputs differ in shape"));
    }
    if cfg.levels == 0 || cfg.orientations == 0 || cfg.kernel_size % 2 == 0 {
        return Err(contract!(
            "CW-SSIM needs >= 1 level and orientation and an odd kernel"
        ));
    }
    let deepest = x.width.min(x.height) >> (cfg.levels - 1);
    if deepest < cfg.kernel_size + cfg.window - 1 {
        return Err(contract!(
            "image {}x{} too small for a {}-level pyramid with kernel {} and window {}",
            x.width,
            x.height,
            cfg.levels,
            cfg.kernel_size,
            cfg.window
        ));
    }
    let mut px = x.clone();
    let mut py = y.clone();
    let mut bands = Vec::with_capacity(cfg.levels * cfg.orientations);
    for level in 0..cfg.levels {
        if level > 0 {
            px = px.downsample2();
            py = py.downsample2();
        }
        for o in 0..cfg.orientations {
            let theta = o as f64 * PI / cfg.orientations as f64;
            let (gx, gy) = gabor_kernel(cfg, theta);
            let bx = filter_band(&px, &gx, &gy);
            let by = filter_band(&py, &gx, &gy);
            bands.push(band_index(&bx, &by, cfg.window, cfg.k));
        }
    }
    Ok(pairwise_sum(&bands) / bands.len() as f64)
}

/// CW-SSIM on BT.601 luma.
pub fn cw_ssim(x: &RgbImage, y: &RgbImage, cfg: &CwSsimConfig) -> Result<f64> {
    cw_ssim_planes(&x.luma(), &y.luma(), cfg)
}

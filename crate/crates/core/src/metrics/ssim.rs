use alloc::vec::Vec;

use super::filter::{filter_valid, gaussian_window};
use super::report::pairwise_sum;
use crate::error::{contract, Result};
use crate::image::{Plane, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the inputs.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.dynamic_range;
        v * v
    }
}

/// Per-position SSIM and contrast-structure maps.
fn ssim_maps(x: &Plane, y: &Plane, cfg: &SsimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.width != y.width || x.height != y.height {
        return Err(contract!(
            "SSIM inputs differ in shape: {}x{} vs {}x{}",
            x.width,
            x.height,
            y.width,
            y.height
        ));
    }
    if x.width < cfg.window || x.height < cfg.window {
        return Err(contract!(
            "image {}x{} is smaller than the {}-pixel SSIM window",
            x.width,
            x.height,
            cfg.window
        ));
    }
    let w = gaussian_window(cfg.window, cfg.sigma);
    let mx = filter_valid(x, &w);
    let my = filter_valid(y, &w);
    let exx = filter_valid(&x.mul(x), &w);
    let eyy = filter_valid(&y.mul(y), &w);
    let exy = filter_valid(&x.mul(y), &w);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let n = mx.data.len();
    let mut ssim = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for i in 0..n {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let sxx = exx.data[i] - ux * ux;
        let syy = eyy.data[i] - uy * uy;
        let sxy = exy.data[i] - ux * uy;
        let contrast = (2.0 * sxy + c2) / (sxx + syy + c2);
        let luminance = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        ssim.push(luminance * contrast);
        cs.push(contrast);
    }
    Ok((ssim, cs))
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Mean SSIM between two single-channel images over Gaussian-weighted
/// windows (valid positions only).
pub fn ssim_planes(x: &Plane, y: &Plane, cfg: &SsimConfig) -> Result<f64> {
    Ok(mean(&ssim_maps(x, y, cfg)?.0))
}

/// SSIM on BT.601 luma.
pub fn ssim(x: &RgbImage, y: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    ssim_planes(&x.luma(), &y.luma(), cfg)
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Multi-scale SSIM. Scales whose image would fall below the SSIM window
/// are dropped and the remaining weights renormalised to sum to 1. The
/// per-scale terms are clamped at 0 before exponentiation.
pub fn ms_ssim_planes(x: &Plane, y: &Plane, cfg: &SsimConfig, weights: &[f64]) -> Result<f64> {
    let mut scales = 0;
    let mut side = x.width.min(x.height);
    while scales < weights.len() && side >= cfg.window {
        scales += 1;
        side /= 2;
    }
    if scales == 0 {
        return Err(contract!(
            "image {}x{} is smaller than the {}-pixel SSIM window",
            x.width,
            x.height,
            cfg.window
        ));
    }
    let used = effective_weights(weights, scales);
    let mut x = x.clone();
    let mut y = y.clone();
    let mut acc = 1.0;
    for (j, w) in used.iter().enumerate() {
        let (s_map, cs_map) = ssim_maps(&x, &y, cfg)?;
        let term = if j + 1 == scales {
            mean(&s_map)
        } else {
            mean(&cs_map)
        };
        acc *= libm::pow(term.max(0.0), *w);
        if j + 1 < scales {
            x = x.downsample2();
            y = y.downsample2();
        }
    }
    Ok(acc)
}

pub fn ms_ssim(x: &RgbImage, y: &RgbImage, cfg: &SsimConfig, weights: &[f64]) -> Result<f64> {
    ms_ssim_planes(&x.luma(), &y.luma(), cfg, weights)
}

/// Renormalised weights used at a given scale count.
pub fn effective_weights(weights: &[f64], scales: usize) -> Vec<f64> {
    let total: f64 = weights[..scales].iter().sum();
    weights[..scales].iter().map(|w| w / total).collect()
}

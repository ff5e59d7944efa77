use alloc::vec::Vec;

use super::extractor::{FeatureExtractor, FeatureMap};
use crate::error::{contract, Result};
use crate::image::RgbImage;

const C1: f64 = 1e-6;
const C2: f64 = 1e-6;

/// Texture (`alpha`) and structure (`beta`) weights, one per stage and
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistsWeights {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl DistsWeights {
    /// Equal weight on every texture and structure term.
    pub fn uniform(channels_per_stage: &[usize]) -> Self {
        let total: usize = channels_per_stage.iter().sum();
        let w = 1.0 / (2 * total) as f64;
        let rows: Vec<Vec<f64>> = channels_per_stage
            .iter()
            .map(|&c| alloc::vec![w; c])
            .collect();
        Self {
            alpha: rows.clone(),
            beta: rows,
        }
    }

    fn validate(&self, stages: &[FeatureMap]) -> Result<()> {
        let shape_ok = self.alpha.len() == stages.len()
            && self.beta.len() == stages.len()
            && stages
                .iter()
                .zip(self.alpha.iter().zip(&self.beta))
                .all(|(s, (a, b))| a.len() == s.channels && b.len() == s.channels);
        if !shape_ok {
            return Err(contract!("DISTS weights do not match extractor stages"));
        }
        let all = self.alpha.iter().chain(&self.beta).flatten();
        if all.clone().any(|w| *w < 0.0) {
            return Err(contract!("DISTS weights must be non-negative"));
        }
        let total: f64 = all.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(contract!("DISTS weights sum to {}, expected 1", total));
        }
        Ok(())
    }
}

fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        vaa += dx * dx;
        vbb += dy * dy;
        vab += dx * dy;
    }
    (ma, mb, vaa / n, vbb / n, vab / n)
}

/// `1 − Σ (α·texture + β·structure)` over every stage and channel, written
/// as `Σ α·(1 − texture) + β·(1 − structure)` (equal when the weights sum to
/// one), with
/// `texture = (2μ_xμ_y + c₁)/(μ_x² + μ_y² + c₁)` and
/// `structure = (2σ_xy + c₂)/(σ_x² + σ_y² + c₂)` over global map statistics.
/// Clamped to `[0, 1]`.
pub fn dists_from_stages(
    fx: &[FeatureMap],
    fy: &[FeatureMap],
    weights: Option<&DistsWeights>,
) -> Result<f64> {
    if fx.is_empty() || fx.len() != fy.len() {
        return Err(contract!(
            "extractor produced {} and {} stages",
            fx.len(),
            fy.len()
        ));
    }
    for (a, b) in fx.iter().zip(fy) {
        if a.channels != b.channels || a.width != b.width || a.height != b.height {
            return Err(contract!("extractor stage shapes differ between images"));
        }
    }
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = DistsWeights::uniform(&fx.iter().map(|s| s.channels).collect::<Vec<_>>());
            &uniform
        }
    };
    weights.validate(fx)?;
    let mut distance = 0.0;
    for (s, (a, b)) in fx.iter().zip(fy).enumerate() {
        for c in 0..a.channels {
            let (mx, my, vx, vy, cxy) = moments(a.channel(c), b.channel(c));
            let texture = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
            let structure = (2.0 * cxy + C2) / (vx + vy + C2);
            distance += weights.alpha[s][c] * (1.0 - texture) + weights.beta[s][c] * (1.0 - structure);
        }
    }
    Ok(distance.clamp(0.0, 1.0))
}

pub fn dists<E: FeatureExtractor + ?Sized>(
    x: &RgbImage,
    y: &RgbImage,
    extractor: &E,
    weights: Option<&DistsWeights>,
) -> Result<f64> {
    dists_from_stages(&extractor.stages(x)?, &extractor.stages(y)?, weights)
}

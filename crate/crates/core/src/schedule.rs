//! Discrete noise schedules, forward diffusion, inference sigma grids and
//! the warmup/decay learning-rate schedule.

use alloc::vec::Vec;

use crate::error::{config_err, contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaKind {
    /// β interpolated linearly between the endpoints.
    Linear,
    /// √β interpolated linearly, then squared.
    ScaledLinear,
}

/// β, ᾱ and σ tables indexed by timestep `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(kind: BetaKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(config_err!("schedule needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(config_err!(
                "need 0 < beta_start <= beta_end < 1, got {} and {}",
                beta_start,
                beta_end
            ));
        }
        let ramp = |i: usize| {
            if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            }
        };
        let betas = (0..steps)
            .map(|i| match kind {
                BetaKind::Linear => beta_start + (beta_end - beta_start) * ramp(i),
                BetaKind::ScaledLinear => {
                    let (a, b) = (libm::sqrt(beta_start), libm::sqrt(beta_end));
                    let r = a + (b - a) * ramp(i);
                    r * r
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(config_err!("schedule needs at least one timestep"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(config_err!("beta {} outside (0, 1)", b));
        }
        let mut alphas_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alphas_bar.push(acc);
        }
        let sigmas = alphas_bar.iter().map(|&a| sigma_from_alpha_bar(a)).collect();
        Ok(Self {
            betas,
            alphas_bar,
            sigmas,
        })
    }

    /// Number of training timesteps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(contract!("timestep {} outside 1..={}", t, self.len()));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alphas_bar[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigmas[self.index(t)?])
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[self.len() - 1]
    }

    /// Timestep whose σ is nearest to `sigma` in log space. The timestep
    /// table is discrete, so continuous sampler sigmas are rounded.
    pub fn timestep_for_sigma(&self, sigma: f64) -> usize {
        if sigma <= 0.0 {
            return 1;
        }
        let target = libm::log(sigma);
        let mut best = (0, f64::INFINITY);
        for (i, s) in self.sigmas.iter().enumerate() {
            let d = libm::fabs(libm::log(*s) - target);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0 + 1
    }
}

/// `σ = √((1 − ᾱ) / ᾱ)`.
pub fn sigma_from_alpha_bar(alpha_bar: f64) -> f64 {
    libm::sqrt((1.0 - alpha_bar) / alpha_bar)
}

/// `x_t = √ᾱ·x₀ + √(1 − ᾱ)·ε` for an explicit `ᾱ`.
pub fn forward_diffuse_with(x0: &[f32], eps: &[f32], alpha_bar: f64) -> Result<Vec<f32>> {
    if x0.len() != eps.len() {
        return Err(contract!(
            "x0 has {} values but noise has {}",
            x0.len(),
            eps.len()
        ));
    }
    let a = libm::sqrt(alpha_bar);
    let b = libm::sqrt(1.0 - alpha_bar);
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (a * f64::from(x) + b * f64::from(e)) as f32)
        .collect())
}

pub fn forward_diffuse(
    x0: &[f32],
    t: usize,
    eps: &[f32],
    schedule: &NoiseSchedule,
) -> Result<Vec<f32>> {
    forward_diffuse_with(x0, eps, schedule.alpha_bar(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSpacing {
    /// ρ = 7 power interpolation between σ_max and σ_min.
    KarrasRho7,
    /// Evenly spaced schedule indices from `T` down to 1.
    LinearIndex,
}

pub const KARRAS_RHO: f64 = 7.0;

/// `σ_i = (σ_max^{1/ρ} + i/(n−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`, `i = 0..n`.
pub fn karras_sigmas(sigma_min: f64, sigma_max: f64, n: usize, rho: f64) -> Vec<f64> {
    let lo = libm::pow(sigma_min, 1.0 / rho);
    let hi = libm::pow(sigma_max, 1.0 / rho);
    (0..n)
        .map(|i| {
            if i == 0 {
                return sigma_max;
            }
            let r = i as f64 / (n - 1) as f64;
            libm::pow(hi + r * (lo - hi), rho)
        })
        .collect()
}

/// Decreasing grid of `n_steps + 1` sigmas starting at the schedule's σ_max
/// and ending at 0.
pub fn sigma_grid(schedule: &NoiseSchedule, n_steps: usize, spacing: SigmaSpacing) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(config_err!("sampler needs at least one step"));
    }
    let mut grid = match spacing {
        SigmaSpacing::KarrasRho7 => karras_sigmas(
            schedule.sigma_min(),
            schedule.sigma_max(),
            n_steps,
            KARRAS_RHO,
        ),
        SigmaSpacing::LinearIndex => {
            let last = schedule.len() - 1;
            if n_steps > schedule.len() {
                return Err(config_err!(
                    "linear-index spacing cannot take {} steps from {} timesteps",
                    n_steps,
                    schedule.len()
                ));
            }
            (0..n_steps)
                .map(|i| {
                    let idx = if n_steps == 1 {
                        last
                    } else {
                        let pos = last as f64 * (1.0 - i as f64 / (n_steps - 1) as f64);
                        libm::round(pos) as usize
                    };
                    schedule.sigmas()[idx]
                })
                .collect()
        }
    };
    grid.push(0.0);
    Ok(grid)
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup: usize, total: usize) -> Result<Self> {
        if warmup > total {
            return Err(config_err!(
                "warmup ({}) exceeds total steps ({})",
                warmup,
                total
            ));
        }
        if !(peak >= 0.0) {
            return Err(config_err!("learning rate must be non-negative"));
        }
        Ok(Self {
            peak,
            warmup,
            total,
        })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.peak * step as f64 / self.warmup as f64
        } else if self.total > self.warmup {
            let left = self.total.saturating_sub(step) as f64;
            self.peak * left / (self.total - self.warmup) as f64
        } else {
            self.peak
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps_apart(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn cumulative_product_example() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for (got, want) in s.alphas_bar().iter().zip([0.9, 0.72, 0.504, 0.3024]) {
            assert!(ulps_apart(*got, want) <= 1, "{got} vs {want}");
        }
        assert_eq!(s.alpha_bar(1).unwrap(), 1.0 - 0.1);
        let linear = NoiseSchedule::build(BetaKind::Linear, 4, 0.1, 0.4).unwrap();
        for (a, b) in linear.betas().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_at_half() {
        assert_eq!(sigma_from_alpha_bar(0.5), 1.0);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::build(BetaKind::Linear, 0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::build(BetaKind::Linear, 10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::build(BetaKind::Linear, 10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::build(BetaKind::Linear, 10, 0.1, 1.0).is_err());
    }

    #[test]
    fn timestep_bounds() {
        let s = NoiseSchedule::build(BetaKind::ScaledLinear, 1000, 0.00085, 0.012).unwrap();
        assert!(s.alpha_bar(0).is_err());
        assert!(s.alpha_bar(1001).is_err());
        assert_eq!(s.timestep_for_sigma(s.sigma_max()), 1000);
        assert_eq!(s.timestep_for_sigma(s.sigma(417).unwrap()), 417);
    }

    #[test]
    fn forward_limits() {
        let x0 = [0.3f32, -1.2];
        let eps = [0.7f32, 0.1];
        assert_eq!(forward_diffuse_with(&x0, &eps, 1.0).unwrap(), x0);
        assert_eq!(forward_diffuse_with(&x0, &eps, 0.0).unwrap(), eps);
        let xt = forward_diffuse_with(&[1.0, 0.0], &[0.0, 1.0], 0.25).unwrap();
        assert!((xt[0] - 0.5).abs() < 1e-7 && (xt[1] - 0.866_025_4).abs() < 1e-7);
        assert!(forward_diffuse_with(&[1.0], &[0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn karras_grid_by_hand() {
        // ρ-interpolation between 10 and 0.1 with three points: the middle
        // value is ((10^{1/7} + 0.1^{1/7}) / 2)^7.
        let g = karras_sigmas(0.1, 10.0, 3, 7.0);
        let mid = ((libm::pow(10.0, 1.0 / 7.0) + libm::pow(0.1, 1.0 / 7.0)) / 2.0).powi(7);
        assert_eq!(g[0], 10.0);
        assert!((g[1] - mid).abs() < 1e-12);
        assert!((g[1] - 1.450_732_1).abs() < 1e-6);
        assert!((g[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn grids_are_strictly_decreasing_and_end_at_zero() {
        let s = NoiseSchedule::build(BetaKind::ScaledLinear, 1000, 0.00085, 0.012).unwrap();
        for spacing in [SigmaSpacing::KarrasRho7, SigmaSpacing::LinearIndex] {
            assert_eq!(sigma_grid(&s, 1, spacing).unwrap(), [s.sigma_max(), 0.0]);
            for n in [2, 5, 20, 50] {
                let g = sigma_grid(&s, n, spacing).unwrap();
                assert_eq!(g.len(), n + 1);
                assert_eq!(g[0], s.sigma_max());
                assert_eq!(*g.last().unwrap(), 0.0);
                assert!(g.windows(2).all(|w| w[0] > w[1]));
            }
        }
        let g = sigma_grid(&s, 20, SigmaSpacing::LinearIndex).unwrap();
        assert!(g[..20].iter().all(|v| s.sigmas().contains(v)));
        assert!(sigma_grid(&s, 0, SigmaSpacing::KarrasRho7).is_err());
    }

    #[test]
    fn lr_warmup_and_decay() {
        let lr = LrSchedule::new(5e-5, 15_000, 150_000).unwrap();
        assert_eq!(lr.lr_at(0), 0.0);
        assert_eq!(lr.lr_at(15_000), 5e-5);
        assert!((lr.lr_at(7_500) - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr.lr_at(150_000), 0.0);
        assert!(LrSchedule::new(1e-3, 10, 5).is_err());
        assert_eq!(LrSchedule::new(1e-3, 0, 0).unwrap().lr_at(0), 1e-3);
    }
}

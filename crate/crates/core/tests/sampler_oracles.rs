//! Euler sampling against the closed-form probability-flow solution for
//! Gaussian data.
//!
//! For data `N(m, v)` the noised marginal at σ is `N(m, v + σ²)`, the ideal
//! denoiser is `m + v/(v + σ²)·(x − m)` and the ODE keeps
//! `(x − m)/√(v + σ²)` constant.

use garb_core::sampler::{euler_sample, gaussian_noise, Branch, Denoiser, GuidedDenoiser, NoisePredictor};
use garb_core::schedule::{sigma_grid, BetaKind, NoiseSchedule, SigmaSpacing};
use garb_core::Result;
use proptest::prelude::*;

struct Ideal {
    mean: f64,
    var: f64,
}

impl Denoiser for Ideal {
    fn denoise(&mut self, x: &[f32], sigma: f64, _: usize) -> Result<Vec<f32>> {
        let k = self.var / (self.var + sigma * sigma);
        Ok(x.iter().map(|&v| (self.mean + k * (f64::from(v) - self.mean)) as f32).collect())
    }
}

fn exact(noise: &[f32], sigma_max: f64, mean: f64, var: f64) -> Vec<f64> {
    let x_t = |n: f32| f64::from(n) * sigma_max;
    noise.iter().map(|&n| mean + (x_t(n) - mean) * (var / (var + sigma_max * sigma_max)).sqrt()).collect()
}

fn desk() -> NoiseSchedule {
    NoiseSchedule::build(BetaKind::ScaledLinear, 1000, 0.00085, 0.012).unwrap()
}

fn max_err(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - y).abs()).fold(0.0, f64::max)
}

#[test]
fn euler_converges_to_exact_flow() {
    let s = desk();
    let noise = gaussian_noise(64, 3);
    let (mean, var) = (0.4, 0.25);
    let want = exact(&noise, s.sigma_max(), mean, var);
    let ns = [5, 10, 20, 50, 200];
    let mut errs = Vec::new();
    for n in ns {
        let grid = sigma_grid(&s, n, SigmaSpacing::KarrasRho7).unwrap();
        let got = euler_sample(&mut Ideal { mean, var }, &noise, &grid).unwrap();
        errs.push(max_err(&got, &want));
    }
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
    // First order: error times step count stays bounded.
    for (n, e) in ns.iter().zip(&errs) {
        assert!(e * *n as f64 <= 3.0, "{errs:?}");
    }
}

/// ε-prediction for Gaussian data from the variance-preserving input, using
/// the discrete timestep's σ. Each branch has its own data mean.
struct GaussianEps<'a> {
    schedule: &'a NoiseSchedule,
    uncond_mean: f64,
    cond_mean: f64,
    var: f64,
}

impl NoisePredictor for GaussianEps<'_> {
    fn predict(&mut self, x: &[f32], t: usize, branch: Branch) -> Result<Vec<f32>> {
        let sigma = self.schedule.sigma(t)?;
        let mean = match branch {
            Branch::Conditional => self.cond_mean,
            Branch::Unconditional => self.uncond_mean,
        };
        let c_in = 1.0 / (sigma * sigma + 1.0).sqrt();
        let k = self.var / (self.var + sigma * sigma);
        Ok(x
            .iter()
            .map(|&v| {
                let xv = f64::from(v) / c_in;
                let d = mean + k * (xv - mean);
                ((xv - d) / sigma) as f32
            })
            .collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The guided ε is linear in the branch means, so guidance at scale `s`
    /// matches conditional sampling toward `m_u + s·(m_c − m_u)`.
    #[test]
    fn guidance_equals_sampling_the_extrapolated_mean(
        mu in -1.0f64..1.0,
        mc in -1.0f64..1.0,
        scale in 0.0f32..4.0,
        seed in any::<u64>(),
    ) {
        let s = desk();
        let noise = gaussian_noise(16, seed);
        let grid = sigma_grid(&s, 20, SigmaSpacing::KarrasRho7).unwrap();
        let var = 0.3;
        let mut guided = GuidedDenoiser::new(GaussianEps { schedule: &s, uncond_mean: mu, cond_mean: mc, var }, &s, scale);
        let a = euler_sample(&mut guided, &noise, &grid).unwrap();
        let ms = mu + f64::from(scale) * (mc - mu);
        let mut single = GuidedDenoiser::new(GaussianEps { schedule: &s, uncond_mean: ms, cond_mean: ms, var }, &s, 1.0);
        let b = euler_sample(&mut single, &noise, &grid).unwrap();
        prop_assert_eq!(single.evaluations(), 20);
        prop_assert_eq!(guided.evaluations(), if scale == 1.0 { 20 } else { 40 });
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-4 * (1.0 + y.abs()), "{} vs {}", x, y);
        }
    }
}

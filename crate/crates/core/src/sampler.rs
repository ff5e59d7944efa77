//! Classifier-free guidance and the deterministic Euler sampler over a
//! sigma grid.
//!
//! The sampler works in the variance-exploding parameterization
//! `x = x₀ + σ·ε`. A [`Denoiser`] returns the denoised estimate `D(x; σ)`;
//! [`GuidedDenoiser`] builds one from a noise-prediction network by scaling
//! the input by `1/√(σ² + 1)` (the variance-preserving `x_t` the network was
//! trained on), combining the two guidance branches and forming
//! `D = x − σ·ε̂`.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, contract, Error, Result};
use crate::schedule::{sigma_grid, NoiseSchedule, SigmaSpacing};

/// `ε_u + s·(ε_c − ε_u)`, evaluated as `(1 − s)·ε_u + s·ε_c` so that `s = 0`
/// and `s = 1` return the respective branch exactly.
pub fn cfg_combine(uncond: &[f32], cond: &[f32], scale: f32) -> Result<Vec<f32>> {
    if uncond.len() != cond.len() {
        return Err(contract!(
            "guidance branches differ in length: {} vs {}",
            uncond.len(),
            cond.len()
        ));
    }
    let keep = 1.0 - scale;
    Ok(uncond
        .iter()
        .zip(cond)
        .map(|(&u, &c)| keep * u + scale * c)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Conditional,
    Unconditional,
}

/// A noise-prediction network evaluated at a discrete timestep.
pub trait NoisePredictor {
    fn predict(&mut self, x: &[f32], timestep: usize, branch: Branch) -> Result<Vec<f32>>;

    /// Both guidance branches, `(unconditional, conditional)`. Implementors
    /// may batch the two evaluations.
    fn predict_both(&mut self, x: &[f32], timestep: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        Ok((
            self.predict(x, timestep, Branch::Unconditional)?,
            self.predict(x, timestep, Branch::Conditional)?,
        ))
    }
}

/// Produces the denoised estimate `D(x; σ)` at sampler step `step`.
pub trait Denoiser {
    fn denoise(&mut self, x: &[f32], sigma: f64, step: usize) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub guidance_scale: f32,
    pub seed: u64,
    pub spacing: SigmaSpacing,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(config_err!("sampler needs at least one step"));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(config_err!(
                "guidance scale must be >= 0, got {}",
                self.guidance_scale
            ));
        }
        Ok(())
    }
}

/// Adapts a [`NoisePredictor`] into a guided [`Denoiser`].
pub struct GuidedDenoiser<'a, P> {
    predictor: P,
    schedule: &'a NoiseSchedule,
    guidance: f32,
    evaluations: usize,
}

impl<'a, P: NoisePredictor> GuidedDenoiser<'a, P> {
    pub fn new(predictor: P, schedule: &'a NoiseSchedule, guidance: f32) -> Self {
        Self {
            predictor,
            schedule,
            guidance,
            evaluations: 0,
        }
    }

    /// Network evaluations so far (two per step unless `s = 1`).
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn into_inner(self) -> P {
        self.predictor
    }
}

impl<P: NoisePredictor> Denoiser for GuidedDenoiser<'_, P> {
    fn denoise(&mut self, x: &[f32], sigma: f64, _step: usize) -> Result<Vec<f32>> {
        let c_in = 1.0 / libm::sqrt(sigma * sigma + 1.0);
        let scaled: Vec<f32> = x.iter().map(|&v| (f64::from(v) * c_in) as f32).collect();
        let t = self.schedule.timestep_for_sigma(sigma);
        let eps = if self.guidance == 1.0 {
            self.evaluations += 1;
            self.predictor.predict(&scaled, t, Branch::Conditional)?
        } else {
            self.evaluations += 2;
            let (u, c) = self.predictor.predict_both(&scaled, t)?;
            cfg_combine(&u, &c, self.guidance)?
        };
        if eps.len() != x.len() {
            return Err(contract!(
                "predictor returned {} values for a {}-value latent",
                eps.len(),
                x.len()
            ));
        }
        Ok(x
            .iter()
            .zip(&eps)
            .map(|(&xv, &e)| (f64::from(xv) - sigma * f64::from(e)) as f32)
            .collect())
    }
}

/// Unit Gaussian noise from a ChaCha stream seeded with `seed`.
pub fn gaussian_noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Euler integration of the probability-flow ODE over `sigmas` (decreasing,
/// last entry 0), starting from `σ₀ · noise`.
///
/// Each step evaluates `D = denoise(x, σ_i)`, `d = (x − D)/σ_i` and
/// `x ← x + (σ_{i+1} − σ_i)·d`, written in the equivalent form
/// `x ← D + (σ_{i+1}/σ_i)·(x − D)` so the final step to σ = 0 returns `D`
/// exactly.
pub fn euler_sample<D: Denoiser>(
    denoiser: &mut D,
    noise: &[f32],
    sigmas: &[f64],
) -> Result<Vec<f32>> {
    if sigmas.len() < 2 {
        return Err(config_err!("sigma grid needs at least two entries"));
    }
    let mut x: Vec<f32> = noise
        .iter()
        .map(|&n| (f64::from(n) * sigmas[0]) as f32)
        .collect();
    for (step, w) in sigmas.windows(2).enumerate() {
        let (sigma, next) = (w[0], w[1]);
        let denoised = denoiser.denoise(&x, sigma, step)?;
        if denoised.len() != x.len() {
            return Err(contract!("denoiser changed the latent size at step {}", step));
        }
        let ratio = next / sigma;
        for (xv, &d) in x.iter_mut().zip(&denoised) {
            let d = f64::from(d);
            *xv = (d + ratio * (f64::from(*xv) - d)) as f32;
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(alloc::format!(
                "non-finite sampler state at step {} (element {})",
                step,
                i
            )));
        }
    }
    Ok(x)
}

/// Guided Euler sampling of one latent of `len` values.
pub fn sample_latent<P: NoisePredictor>(
    predictor: P,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    len: usize,
) -> Result<Vec<f32>> {
    config.validate()?;
    let sigmas = sigma_grid(schedule, config.n_steps, config.spacing)?;
    let noise = gaussian_noise(len, config.seed);
    let mut denoiser = GuidedDenoiser::new(predictor, schedule, config.guidance_scale);
    euler_sample(&mut denoiser, &noise, &sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::BetaKind;

    #[test]
    fn guidance_algebra() {
        let u = [0.3f32, -1.7, 2.25];
        let c = [1.1f32, 0.4, -0.9];
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(
            cfg_combine(&[0.0, 0.0], &[2.0, -2.0], 1.5).unwrap(),
            [3.0, -3.0]
        );
        assert!(cfg_combine(&[0.0], &[1.0, 2.0], 1.5).is_err());
    }

    struct Zero;
    impl Denoiser for Zero {
        fn denoise(&mut self, x: &[f32], _: f64, _: usize) -> Result<Vec<f32>> {
            Ok(alloc::vec![0.0; x.len()])
        }
    }

    #[test]
    fn zero_denoiser_collapses() {
        let noise = gaussian_noise(64, 3);
        let sigmas = [14.6, 3.0, 0.4, 0.03, 0.0];
        let out = euler_sample(&mut Zero, &noise, &sigmas).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    struct Blowup;
    impl Denoiser for Blowup {
        fn denoise(&mut self, x: &[f32], _: f64, step: usize) -> Result<Vec<f32>> {
            Ok(x.iter().map(|_| if step == 1 { f32::NAN } else { 1.0 }).collect())
        }
    }

    #[test]
    fn non_finite_state_reports_step() {
        let err = euler_sample(&mut Blowup, &[1.0, 2.0], &[3.0, 2.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("step 1")));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamplerConfig {
            n_steps: 20,
            guidance_scale: 1.5,
            seed: 0,
            spacing: SigmaSpacing::KarrasRho7,
        };
        assert!(cfg.validate().is_ok());
        cfg.guidance_scale = -0.1;
        assert!(cfg.validate().is_err());
        cfg.guidance_scale = 1.0;
        cfg.n_steps = 0;
        assert!(cfg.validate().is_err());
        let s = NoiseSchedule::build(BetaKind::Linear, 10, 1e-4, 2e-2).unwrap();
        struct Nil;
        impl NoisePredictor for Nil {
            fn predict(&mut self, x: &[f32], _: usize, _: Branch) -> Result<Vec<f32>> {
                Ok(alloc::vec![0.0; x.len()])
            }
        }
        assert!(sample_latent(Nil, &s, &cfg, 4).is_err());
    }
}

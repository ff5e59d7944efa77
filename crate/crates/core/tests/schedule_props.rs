//! Schedule invariants over the full training horizon.

use garb_core::schedule::{
    forward_diffuse, karras_sigmas, sigma_grid, BetaKind, LrSchedule, NoiseSchedule, SigmaSpacing,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn desk() -> NoiseSchedule {
    NoiseSchedule::build(BetaKind::ScaledLinear, 1000, 0.00085, 0.012).unwrap()
}

#[test]
fn alpha_bar_sigma_and_snr_are_monotone() {
    for kind in [BetaKind::Linear, BetaKind::ScaledLinear] {
        let s = NoiseSchedule::build(kind, 1000, 0.00085, 0.012).unwrap();
        let ab = s.alphas_bar();
        let sig = s.sigmas();
        for t in 1..1000 {
            assert!(ab[t] < ab[t - 1]);
            assert!(sig[t] > sig[t - 1]);
            let snr = |a: f64| a / (1.0 - a);
            assert!(snr(ab[t]) < snr(ab[t - 1]));
        }
        assert!(ab[999] > 0.0 && ab[0] < 1.0);
    }
}

#[test]
fn alpha_bar_is_running_product_oracle() {
    let s = desk();
    let mut prod = 1.0f64;
    for t in 1..=1000 {
        let i = t as f64 - 1.0;
        let r = 0.00085f64.sqrt() + (0.012f64.sqrt() - 0.00085f64.sqrt()) * i / 999.0;
        prod *= 1.0 - r * r;
        let got = s.alpha_bar(t).unwrap();
        assert!((got - prod).abs() <= 1e-12 * prod.max(1e-300) + 1e-15, "t={t}");
    }
}

#[test]
fn forward_diffusion_variance_monte_carlo() {
    // x0 ~ N(0, 1) and eps ~ N(0, 1) independent: Var(x_t) = ᾱ + (1 − ᾱ) = 1,
    // Cov(x_t, x0) = √ᾱ.
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200_000;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..n).map(|_| Distribution::<f32>::sample(&StandardNormal, rng)).collect() };
    let x0 = draw(&mut rng);
    let eps = draw(&mut rng);
    for t in [1usize, 250, 500, 1000] {
        let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
        let var = xt.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / n as f64;
        let cov = xt.iter().zip(&x0).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>() / n as f64;
        // 4 standard errors at n = 200k.
        assert!((var - 1.0).abs() < 4.0 * (2.0f64 / n as f64).sqrt(), "t={t} var={var}");
        assert!((cov - s.alpha_bar(t).unwrap().sqrt()).abs() < 0.015, "t={t} cov={cov}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_grids_decrease_to_zero(n in 1usize..200, karras in any::<bool>()) {
        let s = desk();
        let spacing = if karras { SigmaSpacing::KarrasRho7 } else { SigmaSpacing::LinearIndex };
        let g = sigma_grid(&s, n, spacing).unwrap();
        prop_assert_eq!(g.len(), n + 1);
        prop_assert_eq!(g[0], s.sigma_max());
        prop_assert_eq!(*g.last().unwrap(), 0.0);
        for w in g.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        if n > 1 {
            prop_assert!((g[n - 1] - s.sigma_min()).abs() <= 1e-9 * s.sigma_min());
        }
    }

    #[test]
    fn karras_interior_points_satisfy_power_law(n in 3usize..60, lo in 0.01f64..1.0, span in 1.5f64..100.0) {
        let hi = lo * span;
        let g = karras_sigmas(lo, hi, n, 7.0);
        // σ^{1/ρ} is evenly spaced.
        let r: Vec<f64> = g.iter().map(|v| v.powf(1.0 / 7.0)).collect();
        let step = r[1] - r[0];
        for w in r.windows(2) {
            prop_assert!(((w[1] - w[0]) - step).abs() < 1e-9);
        }
    }

    #[test]
    fn timestep_lookup_inverts_table(t in 1usize..=1000) {
        let s = desk();
        prop_assert_eq!(s.timestep_for_sigma(s.sigma(t).unwrap()), t);
    }

    #[test]
    fn lr_is_bounded_and_piecewise_monotone(warmup in 0usize..500, extra in 0usize..2000, peak in 1e-6f64..1e-2) {
        let total = warmup + extra;
        let lr = LrSchedule::new(peak, warmup, total).unwrap();
        let mut prev = lr.lr_at(0);
        for step in 1..=total {
            let v = lr.lr_at(step);
            prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&v));
            if step <= warmup {
                prop_assert!(v >= prev);
            } else {
                prop_assert!(v <= prev);
            }
            prev = v;
        }
        if extra > 0 {
            prop_assert_eq!(lr.lr_at(total), 0.0);
        }
    }
}

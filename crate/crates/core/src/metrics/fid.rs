use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{contract, Error, Result};

/// Gaussian moments of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim` unbiased covariance.
    pub covariance: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(contract!(
                "feature statistics need at least 2 samples, got {}",
                features.len()
            ));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(contract!("feature vectors differ in length"));
        }
        let n = features.len() as f64;
        let mut mean = alloc::vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut covariance = alloc::vec![0.0; dim * dim];
        for f in features {
            for i in 0..dim {
                let di = f[i] - mean[i];
                for j in i..dim {
                    covariance[i * dim + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = covariance[i * dim + j] / (n - 1.0);
                covariance[i * dim + j] = v;
                covariance[j * dim + i] = v;
            }
        }
        Ok(Self {
            mean,
            covariance,
            count: features.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<()> {
        if self.count < 2 {
            return Err(contract!("feature statistics need at least 2 samples"));
        }
        if self.covariance.len() != self.dim() * self.dim() {
            return Err(contract!("covariance does not match mean dimension"));
        }
        if self.mean.iter().chain(&self.covariance).any(|v| !v.is_finite()) {
            return Err(contract!("non-finite feature statistics"));
        }
        Ok(())
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clip to 0.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_aΣ_b)^{1/2})`.
///
/// `Tr((Σ_aΣ_b)^{1/2})` is the sum of square roots of the eigenvalues of the
/// symmetrised `Σ_a^{1/2} Σ_b Σ_a^{1/2}` (same spectrum as `Σ_aΣ_b`), with
/// negative eigenvalues clipped to 0. Identical statistics return 0 without
/// touching the eigensolver; the result is clamped at 0.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    a.check()?;
    b.check()?;
    if a.dim() != b.dim() {
        return Err(contract!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        ));
    }
    if a.mean == b.mean && a.covariance == b.covariance {
        return Ok(0.0);
    }
    let d = a.dim();
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sa = DMatrix::from_row_slice(d, d, &a.covariance);
    let sb = DMatrix::from_row_slice(d, d, &b.covariance);
    let root_a = sqrt_psd(&sa);
    let inner = symmetrize(&(&root_a * &sb * &root_a));
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))).sum();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if !value.is_finite() {
        return Err(Error::Numerical(alloc::format!("FID evaluated to {}", value)));
    }
    Ok(value.max(0.0))
}

use alloc::vec::Vec;

use super::report::pairwise_sum;
use crate::error::{contract, Result};

fn kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let v = dot / x.len() as f64 + 1.0;
    v * v * v
}

/// Kernel Inception Distance with the cubic polynomial kernel
/// `k(x, y) = (xᵀy/dim + 1)³`.
///
/// Both sets are cut into consecutive blocks of `m = min(block_size, |a|,
/// |b|)` samples; block `i` of `a` is compared with block `i` of `b` using
/// the unbiased U-statistic
/// `1/(m(m−1)) Σ_{i≠j} k(a_i,a_j) + k(b_i,b_j) − k(a_i,b_j) − k(a_j,b_i)`,
/// and the block estimates are averaged. The value may be slightly negative.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>], block_size: usize) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(contract!(
            "KID needs at least 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|f| f.len() != dim) || dim == 0 {
        return Err(contract!("KID feature vectors differ in length"));
    }
    let m = block_size.min(a.len()).min(b.len());
    if m < 2 {
        return Err(contract!("KID block size must be at least 2"));
    }
    let blocks = a.len().min(b.len()) / m;
    let mut estimates = Vec::with_capacity(blocks);
    for blk in 0..blocks {
        let xs = &a[blk * m..(blk + 1) * m];
        let ys = &b[blk * m..(blk + 1) * m];
        let mut terms = Vec::with_capacity(m * (m - 1));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    terms.push(
                        kernel(&xs[i], &xs[j]) + kernel(&ys[i], &ys[j])
                            - kernel(&xs[i], &ys[j])
                            - kernel(&xs[j], &ys[i]),
                    );
                }
            }
        }
        estimates.push(pairwise_sum(&terms) / (m * (m - 1)) as f64);
    }
    Ok(pairwise_sum(&estimates) / estimates.len() as f64)
}

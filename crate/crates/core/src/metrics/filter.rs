use alloc::vec::Vec;

use crate::image::Plane;

/// Normalised 1D Gaussian of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable correlation with `kernel` on both axes, keeping only positions
/// where the kernel fits ("valid" mode). Caller checks the size.
pub fn filter_valid(plane: &Plane, kernel: &[f64]) -> Plane {
    let k = kernel.len();
    let ow = plane.width + 1 - k;
    let oh = plane.height + 1 - k;
    let mut rows = Plane::zeros(ow, plane.height);
    for y in 0..plane.height {
        let src = &plane.data[y * plane.width..(y + 1) * plane.width];
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * src[x + j];
            }
            rows.data[y * ow + x] = acc;
        }
    }
    let mut out = Plane::zeros(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * rows.data[(y + j) * ow + x];
            }
            out.data[y * ow + x] = acc;
        }
    }
    out
}

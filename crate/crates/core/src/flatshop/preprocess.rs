//! Pad-to-square and bilinear resizing applied to every input image.

use crate::error::{contract, Result};
use crate::image::RgbImage;

pub const WHITE: [u8; 3] = [255, 255, 255];

/// Pads the shorter axis with `fill` so the result is `S × S`, `S = max(H, W)`.
/// The original is centred; when the padding is odd the extra column (or
/// row) goes on the right (bottom).
pub fn pad_to_square(image: &RgbImage, fill: [u8; 3]) -> RgbImage {
    let (w, h) = (image.width(), image.height());
    if w == h {
        return image.clone();
    }
    let s = w.max(h);
    let left = (s - w) / 2;
    let top = (s - h) / 2;
    let mut out = RgbImage::new(s, s, fill);
    for y in 0..h {
        for x in 0..w {
            out.put(left + x, top + y, image.get(x, y));
        }
    }
    out
}

/// Inverse of [`pad_to_square`] for an original of `width × height`.
pub fn crop_center(padded: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    if width > padded.width() || height > padded.height() {
        return Err(contract!(
            "cannot crop {}x{} out of {}x{}",
            width,
            height,
            padded.width(),
            padded.height()
        ));
    }
    padded.crop(
        (padded.width() - width) / 2,
        (padded.height() - height) / 2,
        width,
        height,
    )
}

/// Bilinear resize of a square image to `target × target` using the
/// corners-aligned convention: output pixel `i` samples source coordinate
/// `i · (S − 1) / (T − 1)`, so the four corner pixels map onto each other.
/// Each channel is `(1−fy)·((1−fx)·p00 + fx·p01) + fy·((1−fx)·p10 + fx·p11)`,
/// rounded half away from zero.
pub fn resize_bilinear(image: &RgbImage, target: usize) -> Result<RgbImage> {
    if !image.is_square() {
        return Err(contract!(
            "bilinear resize expects a square image, got {}x{}",
            image.width(),
            image.height()
        ));
    }
    if target == 0 || image.width() == 0 {
        return Err(contract!("resize target and source must be non-empty"));
    }
    let s = image.width();
    if s == target {
        return Ok(image.clone());
    }
    let scale = if target > 1 {
        (s - 1) as f64 / (target - 1) as f64
    } else {
        0.0
    };
    let mut out = RgbImage::new(target, target, [0; 3]);
    for i in 0..target {
        let sy = i as f64 * scale;
        let y0 = (libm::floor(sy) as usize).min(s - 1);
        let y1 = (y0 + 1).min(s - 1);
        let fy = sy - y0 as f64;
        for j in 0..target {
            let sx = j as f64 * scale;
            let x0 = (libm::floor(sx) as usize).min(s - 1);
            let x1 = (x0 + 1).min(s - 1);
            let fx = sx - x0 as f64;
            let (p00, p01) = (image.get(x0, y0), image.get(x1, y0));
            let (p10, p11) = (image.get(x0, y1), image.get(x1, y1));
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = (1.0 - fx) * f64::from(p00[c]) + fx * f64::from(p01[c]);
                let bottom = (1.0 - fx) * f64::from(p10[c]) + fx * f64::from(p11[c]);
                let v = (1.0 - fy) * top + fy * bottom;
                px[c] = libm::round(v).clamp(0.0, 255.0) as u8;
            }
            out.put(j, i, px);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn full_resolution_pads_128_each_side() {
        let img = RgbImage::new(768, 1024, [10, 20, 30]);
        let sq = pad_to_square(&img, WHITE);
        assert_eq!((sq.width(), sq.height()), (1024, 1024));
        for y in [0, 511, 1023] {
            assert_eq!(sq.get(127, y), WHITE);
            assert_eq!(sq.get(128, y), [10, 20, 30]);
            assert_eq!(sq.get(895, y), [10, 20, 30]);
            assert_eq!(sq.get(896, y), WHITE);
        }
    }

    #[test]
    fn narrow_image_pads_one_column_each_side() {
        let img = RgbImage::new(2, 4, [0, 0, 0]);
        let sq = pad_to_square(&img, WHITE);
        assert_eq!((sq.width(), sq.height()), (4, 4));
        for y in 0..4 {
            assert_eq!(sq.get(0, y), WHITE);
            assert_eq!(sq.get(1, y), [0, 0, 0]);
            assert_eq!(sq.get(2, y), [0, 0, 0]);
            assert_eq!(sq.get(3, y), WHITE);
        }
    }

    #[test]
    fn square_is_unchanged() {
        let img = RgbImage::new(5, 5, [1, 2, 3]);
        assert_eq!(pad_to_square(&img, WHITE), img);
    }

    #[test]
    fn resize_shapes_and_identity() {
        let img = RgbImage::new(1024, 1024, [9, 9, 9]);
        let small = resize_bilinear(&img, 512).unwrap();
        assert_eq!((small.width(), small.height()), (512, 512));
        let px: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let img = RgbImage::from_raw(4, 4, px).unwrap();
        assert_eq!(resize_bilinear(&img, 4).unwrap(), img);
        assert!(resize_bilinear(&RgbImage::new(3, 4, WHITE), 2).is_err());
    }

    #[test]
    fn checkerboard_upsample_matches_hand_formula() {
        // 2x2 checkerboard: black at (0,0) and (1,1), white elsewhere.
        let mut img = RgbImage::new(2, 2, [0, 0, 0]);
        img.put(1, 0, WHITE);
        img.put(0, 1, WHITE);
        let up = resize_bilinear(&img, 4).unwrap();
        // Sample positions are 0, 1/3, 2/3, 1 on both axes, so the value at
        // (fx, fy) is 255·(fx + fy − 2·fx·fy).
        let expect = |fx: f64, fy: f64| libm::round(255.0 * (fx + fy - 2.0 * fx * fy)) as u8;
        for i in 0..4 {
            for j in 0..4 {
                let (fx, fy) = (j as f64 / 3.0, i as f64 / 3.0);
                assert_eq!(up.get(j, i)[0], expect(fx, fy), "at ({j},{i})");
            }
        }
        assert_eq!(up.get(1, 1)[0], 113); // 255·(4/9) = 113.33
        assert_eq!(up.get(1, 0)[0], 85);
    }
}

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::image::{Plane, RgbImage};

/// Channel-major feature maps of one extractor stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_planes(planes: &[Plane]) -> Self {
        let (width, height) = (planes[0].width, planes[0].height);
        let mut data = Vec::with_capacity(planes.len() * width * height);
        for p in planes {
            data.extend_from_slice(&p.data);
        }
        Self {
            channels: planes.len(),
            width,
            height,
            data,
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Source of features for DISTS (multi-stage maps) and FID/KID (one
/// embedding vector per image).
pub trait FeatureExtractor {
    fn name(&self) -> &str;

    fn stages(&self, image: &RgbImage) -> Result<Vec<FeatureMap>>;

    fn embedding(&self, image: &RgbImage) -> Result<Vec<f64>>;
}

/// Pretrained-free extractor: stage `k` is the RGB image box-downsampled
/// `k` times; the embedding is the RGB image block-averaged to
/// `embed_side × embed_side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityExtractor {
    pub stages: usize,
    pub embed_side: usize,
}

impl Default for IdentityExtractor {
    fn default() -> Self {
        Self {
            stages: 3,
            embed_side: 8,
        }
    }
}

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn stages(&self, image: &RgbImage) -> Result<Vec<FeatureMap>> {
        let mut planes: Vec<Plane> = image.to_planes().into();
        let mut out = Vec::with_capacity(self.stages);
        for k in 0..self.stages {
            if k > 0 {
                planes = planes.iter().map(Plane::downsample2).collect();
            }
            if planes[0].width == 0 || planes[0].height == 0 {
                return Err(contract!("image too small for {} extractor stages", self.stages));
            }
            out.push(FeatureMap::from_planes(&planes));
        }
        Ok(out)
    }

    fn embedding(&self, image: &RgbImage) -> Result<Vec<f64>> {
        let (w, h) = (image.width(), image.height());
        let side = self.embed_side;
        if side == 0 || w % side != 0 || h % side != 0 {
            return Err(contract!(
                "image {}x{} does not divide into a {}x{} embedding grid",
                w,
                h,
                side,
                side
            ));
        }
        let (bw, bh) = (w / side, h / side);
        let planes = image.to_planes();
        let mut out = Vec::with_capacity(3 * side * side);
        for p in &planes {
            for gy in 0..side {
                for gx in 0..side {
                    let mut acc = 0.0;
                    for y in gy * bh..(gy + 1) * bh {
                        for x in gx * bw..(gx + 1) * bw {
                            acc += p.at(x, y);
                        }
                    }
                    out.push(acc / (bw * bh) as f64);
                }
            }
        }
        Ok(out)
    }
}

//! Full-reference and distribution image metrics.
//!
//! SSIM-family metrics operate on BT.601 luma in `[0, 1]`. DISTS, FID and
//! KID consume features from a pluggable [`FeatureExtractor`], so swapping
//! the extractor changes only those three.

mod cw_ssim;
mod dists;
mod extractor;
mod fid;
mod filter;
mod kid;
mod report;
mod ssim;

pub use cw_ssim::{cw_ssim, cw_ssim_planes, gabor_kernel, CwSsimConfig};
pub use dists::{dists, dists_from_stages, DistsWeights};
pub use extractor::{FeatureExtractor, FeatureMap, IdentityExtractor};
pub use fid::{fid, FeatureStats};
pub use filter::{filter_valid, gaussian_window};
pub use kid::kid;
pub use report::{evaluate_images, pairwise_sum, Aggregate, MetricConfig, MetricReport, PairScores};
pub use ssim::{
    effective_weights, ms_ssim, ms_ssim_planes, ssim, ssim_planes, SsimConfig, MS_SSIM_WEIGHTS,
};

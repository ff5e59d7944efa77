use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::cw_ssim::{cw_ssim, CwSsimConfig};
use super::dists::dists_from_stages;
use super::extractor::FeatureExtractor;
use super::fid::{fid, FeatureStats};
use super::kid::kid;
use super::ssim::{ms_ssim, ssim, SsimConfig, MS_SSIM_WEIGHTS};
use crate::error::{contract, Result};
use crate::image::RgbImage;

/// Sum in a fixed binary-tree order, independent of how the caller
/// produced the slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub ssim: SsimConfig,
    pub ms_ssim_weights: Vec<f64>,
    pub cw_ssim: CwSsimConfig,
    pub kid_block_size: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            ms_ssim_weights: MS_SSIM_WEIGHTS.to_vec(),
            cw_ssim: CwSsimConfig::default(),
            kid_block_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub id: String,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub cw_ssim: f64,
    pub dists: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub ssim: f64,
    pub ms_ssim: f64,
    pub cw_ssim: f64,
    pub dists: f64,
    pub fid: f64,
    pub kid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_pair: Vec<PairScores>,
    pub aggregate: Aggregate,
    pub n_pairs: usize,
    pub extractor: String,
    pub config: MetricConfig,
}

impl MetricReport {
    /// `pair_id,ssim,ms_ssim,cw_ssim,dists` rows followed by `fid,` and
    /// `kid,` footer rows; six decimals throughout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,ssim,ms_ssim,cw_ssim,dists\n");
        for p in &self.per_pair {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                p.id, p.ssim, p.ms_ssim, p.cw_ssim, p.dists
            );
        }
        let _ = writeln!(out, "fid,{:.6}", self.aggregate.fid);
        let _ = writeln!(out, "kid,{:.6}", self.aggregate.kid);
        out
    }
}

/// Scores `(id, prediction, reference)` triples. Pairs are sorted by id
/// before any reduction, so the input order never changes the report.
pub fn evaluate_images<E: FeatureExtractor + ?Sized>(
    pairs: &[(String, RgbImage, RgbImage)],
    extractor: &E,
    config: &MetricConfig,
) -> Result<MetricReport> {
    if pairs.len() < 2 {
        return Err(contract!(
            "evaluation needs at least 2 pairs for set-level metrics, got {}",
            pairs.len()
        ));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.cmp(&pairs[b].0));
    if order.windows(2).any(|w| pairs[w[0]].0 == pairs[w[1]].0) {
        return Err(contract!("duplicate pair ids"));
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut pred_feats = Vec::with_capacity(pairs.len());
    let mut ref_feats = Vec::with_capacity(pairs.len());
    for &i in &order {
        let (id, pred, reference) = &pairs[i];
        if pred.width() != reference.width() || pred.height() != reference.height() {
            return Err(contract!("pair {} has mismatched image sizes", id));
        }
        per_pair.push(PairScores {
            id: id.clone(),
            ssim: ssim(pred, reference, &config.ssim)?,
            ms_ssim: ms_ssim(pred, reference, &config.ssim, &config.ms_ssim_weights)?,
            cw_ssim: cw_ssim(pred, reference, &config.cw_ssim)?,
            dists: dists_from_stages(&extractor.stages(pred)?, &extractor.stages(reference)?, None)?,
        });
        pred_feats.push(extractor.embedding(pred)?);
        ref_feats.push(extractor.embedding(reference)?);
    }
    let mean_of = |f: fn(&PairScores) -> f64| {
        let v: Vec<f64> = per_pair.iter().map(f).collect();
        pairwise_sum(&v) / v.len() as f64
    };
    let aggregate = Aggregate {
        ssim: mean_of(|p| p.ssim),
        ms_ssim: mean_of(|p| p.ms_ssim),
        cw_ssim: mean_of(|p| p.cw_ssim),
        dists: mean_of(|p| p.dists),
        fid: fid(
            &FeatureStats::from_features(&pred_feats)?,
            &FeatureStats::from_features(&ref_feats)?,
        )?,
        kid: kid(&pred_feats, &ref_feats, config.kid_block_size)?,
    };
    Ok(MetricReport {
        n_pairs: per_pair.len(),
        per_pair,
        aggregate,
        extractor: String::from(extractor.name()),
        config: config.clone(),
    })
}

//! Test-set prediction, metric reports (overall and per class) and the
//! guidance/steps sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use garb_core::flatshop::GarmentClass;
use garb_core::metrics::{evaluate_images, FeatureExtractor, MetricConfig, MetricReport};
use garb_core::RgbImage;
use serde::Serialize;

use crate::config::SamplerSettings;
use crate::dataset::{load_png, save_png, DatasetManifest};
use crate::error::{Error, IoContext, Result};
use crate::pipeline::Pipeline;

/// Number of references sampled together in one batched sampler run.
pub const SAMPLE_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub class: GarmentClass,
    pub predicted: RgbImage,
    pub target: RgbImage,
}

/// Predict the garment of the first `limit` manifest entries (all when
/// `None`). Entry `i` uses sampler seed `sampler.seed + i`.
pub fn predict_manifest(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    limit: Option<usize>,
    sampler: &SamplerSettings,
) -> Result<Vec<Prediction>> {
    let n = limit.unwrap_or(manifest.entries.len()).min(manifest.entries.len());
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(SAMPLE_BATCH) {
        let entries: Vec<_> = chunk.iter().map(|&i| &manifest.entries[i]).collect();
        let refs: Vec<RgbImage> = entries.iter().map(|e| manifest.load_reference(e)).collect::<Result<_>>()?;
        let ref_view: Vec<&RgbImage> = refs.iter().collect();
        let classes: Vec<GarmentClass> = entries.iter().map(|e| e.class).collect();
        let seeds: Vec<u64> = chunk.iter().map(|&i| sampler.seed + i as u64).collect();
        let preds = pipeline.try_off_batch(&ref_view, &classes, &seeds, sampler)?;
        for ((&i, e), predicted) in chunk.iter().zip(&entries).zip(preds) {
            out.push(Prediction {
                id: e.pair_id(i),
                class: e.class,
                predicted,
                target: manifest.load_garment(e)?,
            });
        }
    }
    Ok(out)
}

/// Default metrics with the CW-SSIM pyramid cut to the levels that fit
/// `image_size`, as MS-SSIM drops scales smaller than its window.
pub fn metric_config(kid_block_size: usize, image_size: usize) -> MetricConfig {
    let mut cfg = MetricConfig { kid_block_size, ..MetricConfig::default() };
    let need = cfg.cw_ssim.kernel_size + cfg.cw_ssim.window - 1;
    while cfg.cw_ssim.levels > 1 && image_size >> (cfg.cw_ssim.levels - 1) < need {
        cfg.cw_ssim.levels -= 1;
    }
    cfg
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n_pairs: usize,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub cw_ssim: f64,
    pub dists: f64,
    pub fid: f64,
    pub kid: f64,
}

impl From<&MetricReport> for SummaryRow {
    fn from(r: &MetricReport) -> Self {
        let a = r.aggregate;
        Self { n_pairs: r.n_pairs, ssim: a.ssim, ms_ssim: a.ms_ssim, cw_ssim: a.cw_ssim, dists: a.dists, fid: a.fid, kid: a.kid }
    }
}

pub struct EvalSummary {
    pub overall: MetricReport,
    /// Classes with at least two pairs.
    pub per_class: BTreeMap<String, MetricReport>,
    pub extractor: String,
}

impl EvalSummary {
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            extractor: &'a str,
            overall: SummaryRow,
            per_class: BTreeMap<&'a str, SummaryRow>,
        }
        let out = Out {
            extractor: &self.extractor,
            overall: (&self.overall).into(),
            per_class: self.per_class.iter().map(|(k, v)| (k.as_str(), v.into())).collect(),
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }

    /// Plain-text table; `percent` multiplies every metric by 100 for display.
    pub fn table(&self, percent: bool) -> String {
        let k = if percent { 100.0 } else { 1.0 };
        let mut s = format!("{:<12} {:>6} {:>9} {:>9} {:>9} {:>9} {:>10} {:>9}\n", "subset", "n", "SSIM", "MS-SSIM", "CW-SSIM", "DISTS", "FID", "KID");
        let mut line = |name: &str, r: &MetricReport| {
            let a = r.aggregate;
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>9.4}",
                name,
                r.n_pairs,
                a.ssim * k,
                a.ms_ssim * k,
                a.cw_ssim * k,
                a.dists * k,
                a.fid * k,
                a.kid * k
            );
        };
        for (name, r) in &self.per_class {
            line(name, r);
        }
        line("overall", &self.overall);
        s
    }
}

pub fn evaluate_predictions<E: FeatureExtractor + ?Sized>(
    preds: &[Prediction],
    extractor: &E,
    cfg: &MetricConfig,
) -> Result<EvalSummary> {
    let triple = |p: &Prediction| (p.id.clone(), p.predicted.clone(), p.target.clone());
    let overall = evaluate_images(&preds.iter().map(triple).collect::<Vec<_>>(), extractor, cfg)?;
    let mut per_class = BTreeMap::new();
    for class in GarmentClass::ALL {
        let subset: Vec<_> = preds.iter().filter(|p| p.class == class).map(triple).collect();
        if subset.len() >= 2 {
            per_class.insert(class.name().to_string(), evaluate_images(&subset, extractor, cfg)?);
        } else if !subset.is_empty() {
            log::warn!("skipping per-class metrics for {class}: only one pair");
        }
    }
    Ok(EvalSummary { overall, per_class, extractor: extractor.name().to_string() })
}

/// Write `predictions/<id>.png`, `targets/<id>.png`, `metrics.csv` and `summary.json`.
pub fn write_eval(out_dir: &Path, preds: &[Prediction], summary: &EvalSummary) -> Result<()> {
    for p in preds {
        save_png(&out_dir.join("predictions").join(format!("{}.png", p.id)), &p.predicted)?;
        save_png(&out_dir.join("targets").join(format!("{}.png", p.id)), &p.target)?;
    }
    let csv = out_dir.join("metrics.csv");
    std::fs::write(&csv, summary.overall.to_csv()).at(&csv)?;
    let js = out_dir.join("summary.json");
    std::fs::write(&js, summary.to_json()?).at(&js)
}

/// Pair `pred_dir/<id>.png` with `ref_dir/<id>.png`; the class is the id
/// suffix after the first underscore.
pub fn load_prediction_dirs(pred_dir: &Path, ref_dir: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(pred_dir)
        .at(pred_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    for path in names {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let class = id
            .split_once('_')
            .and_then(|(_, c)| c.parse().ok())
            .ok_or_else(|| Error::Config(format!("cannot read a garment class from {id}")))?;
        let target_path = ref_dir.join(format!("{id}.png"));
        if !target_path.exists() {
            return Err(Error::Config(format!("no reference image for {id} in {}", ref_dir.display())));
        }
        out.push(Prediction { id, class, predicted: load_png(&path)?, target: load_png(&target_path)? });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub guidance_scale: f64,
    pub steps: usize,
    /// `(dists, fid)` or the error message for a failed cell.
    pub result: std::result::Result<(f64, f64), String>,
}

/// Evaluate every (guidance, steps) cell on the first `limit` test entries.
/// Failed cells are recorded and the sweep continues.
pub fn run_sweep(
    pipeline: &Pipeline,
    manifest: &DatasetManifest,
    limit: Option<usize>,
    scales: &[f64],
    steps: &[usize],
    base: &SamplerSettings,
) -> Vec<SweepRow> {
    let extractor = pipeline.extractor();
    let cfg = metric_config(pipeline.config.metrics.kid_block_size, pipeline.image_size());
    let mut rows = Vec::new();
    for &s in scales {
        for &n in steps {
            let sampler = SamplerSettings { guidance_scale: s, steps: n, ..base.clone() };
            let result = predict_manifest(pipeline, manifest, limit, &sampler)
                .and_then(|p| evaluate_predictions(&p, extractor.as_ref(), &cfg))
                .map(|sum| (sum.overall.aggregate.dists, sum.overall.aggregate.fid))
                .map_err(|e| e.to_string());
            if let Err(msg) = &result {
                log::warn!("sweep cell s={s} n={n} failed: {msg}");
            }
            rows.push(SweepRow { guidance_scale: s, steps: n, result });
        }
    }
    rows
}

/// `s,n,dists,fid` with `error` in both metric columns for failed cells.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("s,n,dists,fid\n");
    for r in rows {
        match &r.result {
            Ok((d, f)) => {
                let _ = writeln!(s, "{},{},{d:.6},{f:.6}", r.guidance_scale, r.steps);
            }
            Err(_) => {
                let _ = writeln!(s, "{},{},error,error", r.guidance_scale, r.steps);
            }
        }
    }
    s
}

/// Minimal SVG line chart of DISTS against guidance scale, one line per step count.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let ok: Vec<(f64, usize, f64)> = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|(d, _)| (r.guidance_scale, r.steps, *d)))
        .collect();
    let (w, h, m) = (480.0, 320.0, 40.0);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    if ok.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (xmin, xmax) = ok.iter().fold((f64::MAX, f64::MIN), |a, r| (a.0.min(r.0), a.1.max(r.0)));
    let (ymin, ymax) = ok.iter().fold((f64::MAX, f64::MIN), |a, r| (a.0.min(r.2), a.1.max(r.2)));
    let sx = |x: f64| m + (x - xmin) / (xmax - xmin).max(1e-12) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - ymin) / (ymax - ymin).max(1e-12) * (h - 2.0 * m);
    let mut steps: Vec<usize> = ok.iter().map(|r| r.1).collect();
    steps.sort_unstable();
    steps.dedup();
    for (k, n) in steps.iter().enumerate() {
        let pts: Vec<String> =
            ok.iter().filter(|r| r.1 == *n).map(|r| format!("{:.1},{:.1}", sx(r.0), sy(r.2))).collect();
        let hue = 360 * k / steps.len();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"hsl({hue},70%,45%)\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\">n={n}</text>", w - m + 2.0, m + 14.0 * k as f64);
    }
    let _ = writeln!(s, "<text x=\"{m}\" y=\"{}\" font-size=\"11\">guidance scale (x) vs DISTS (y)</text>", h - 8.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cw_levels_fit_image_size() {
        assert_eq!(metric_config(50, 64).cw_ssim.levels, 3);
        assert_eq!(metric_config(50, 32).cw_ssim.levels, 2);
        assert_eq!(metric_config(50, 16).cw_ssim.levels, 1);
        assert_eq!(metric_config(7, 512).kid_block_size, 7);
    }

    #[test]
    fn sweep_csv_marks_failures() {
        let rows = vec![
            SweepRow { guidance_scale: 1.5, steps: 20, result: Ok((0.25, 3.0)) },
            SweepRow { guidance_scale: 2.0, steps: 5, result: Err("boom".into()) },
        ];
        assert_eq!(sweep_csv(&rows), "s,n,dists,fid\n1.5,20,0.250000,3.000000\n2,5,error,error\n");
        assert!(sweep_svg(&rows).contains("polyline"));
    }

    #[test]
    fn prediction_dirs_pair_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let a = RgbImage::new(16, 16, [1, 2, 3]);
        save_png(&dir.path().join("p/00001_dresses.png"), &a).unwrap();
        save_png(&dir.path().join("r/00001_dresses.png"), &a).unwrap();
        let got = load_prediction_dirs(&dir.path().join("p"), &dir.path().join("r")).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].class, GarmentClass::Dresses);
        save_png(&dir.path().join("p/00002_upper_body.png"), &a).unwrap();
        assert!(load_prediction_dirs(&dir.path().join("p"), &dir.path().join("r")).is_err());
    }
}

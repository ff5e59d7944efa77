//! `garb` command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use garb_core::flatshop::GarmentClass;

use crate::config::RunConfig;
use crate::dataset::{generate_dataset, load_png, make_pairing, read_pairing, save_png, write_pairing, DatasetManifest};
use crate::error::{Error, IoContext, Result};
use crate::eval::{evaluate_predictions, load_prediction_dirs, metric_config, predict_manifest, run_sweep, sweep_csv, sweep_svg, write_eval};
use crate::p2p::{run_p2p, write_p2p, GarmentSource};
use crate::pipeline::Pipeline;
use crate::workflow::run_training;

#[derive(Debug, Parser)]
#[command(name = "garb", version, about = "Class-conditioned garment try-off with latent diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with train/test manifests.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a cross-person pairing file for the test split.
        #[arg(long)]
        pairing: bool,
    },
    /// Train codec, feature classifier and diffusion model.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Reconstruct the garment worn in one image.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        class: GarmentClass,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Predict and score a test split, or score existing prediction images.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        /// Score `--pred-dir` against `--ref-dir` instead of sampling.
        #[arg(long, requires = "ref_dir")]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        ref_dir: Option<PathBuf>,
        /// Display metrics multiplied by 100.
        #[arg(long)]
        percent: bool,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// DISTS and FID over a grid of guidance scales and step counts.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long = "step-grid", value_delimiter = ',')]
        step_grid: Option<Vec<usize>>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Person-to-person transfer over a pairing file.
    P2p {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pairing: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the diffusion model; without it the true garments are used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Print the default configuration as JSON.
    PrintConfig,
}

fn apply_sampler(mut s: crate::config::SamplerSettings, a: &SamplerArgs) -> crate::config::SamplerSettings {
    if let Some(v) = a.steps {
        s.steps = v;
    }
    if let Some(v) = a.guidance {
        s.guidance_scale = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    s
}

/// A missing checkpoint is a usage error; a corrupt one is a runtime failure.
fn open_checkpoint(dir: &std::path::Path) -> Result<Pipeline> {
    if !dir.join(crate::checkpoint::MANIFEST_FILE).is_file() {
        return Err(Error::Config(format!("no checkpoint at {}", dir.display())));
    }
    Pipeline::load(dir)
}

fn test_manifest(data: &std::path::Path) -> Result<DatasetManifest> {
    DatasetManifest::read(&data.join("test.tsv"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrintConfig => {
            println!("{}", RunConfig::default().to_json()?);
        }
        Command::GenData { config, out, n_train, n_test, size, seed, pairing } => {
            let mut cfg = config.load()?.data;
            if let Some(v) = out {
                cfg.root = v;
            }
            cfg.n_train = n_train.unwrap_or(cfg.n_train);
            cfg.n_test = n_test.unwrap_or(cfg.n_test);
            cfg.image_size = size.unwrap_or(cfg.image_size);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let (train, test) = generate_dataset(&cfg)?;
            if pairing {
                write_pairing(&cfg.root.join("pairs.tsv"), &make_pairing(&test, cfg.seed)?)?;
            }
            println!("wrote {} train and {} test pairs to {}", train.entries.len(), test.entries.len(), cfg.root.display());
        }
        Command::Train { config, data, out, steps } => {
            let mut cfg = config.load()?;
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            let data = data.unwrap_or_else(|| cfg.data.root.clone());
            std::fs::create_dir_all(&out).at(&out)?;
            let cfg_path = out.join("config.json");
            std::fs::write(&cfg_path, cfg.to_json()?).at(&cfg_path)?;
            let report = run_training(&cfg, &data, &out)?;
            println!(
                "trained {} steps; final loss {:.4}; codec PSNR {:.2} dB; checkpoint {}",
                report.diffusion_loss.len(),
                report.diffusion_loss.last().copied().unwrap_or(f64::NAN),
                report.codec_psnr,
                report.final_checkpoint.display()
            );
        }
        Command::Sample { checkpoint, input, class, output, sampler } => {
            let p = open_checkpoint(&checkpoint)?;
            let s = apply_sampler(p.config.sampler.clone(), &sampler);
            let img = load_png(&input)?;
            let garment = p.try_off(&img, class, s.seed, &s)?;
            save_png(&output, &garment)?;
        }
        Command::Eval { checkpoint, data, out, limit, pred_dir, ref_dir, percent, sampler } => {
            let (summary, table) = if let (Some(pd), Some(rd)) = (pred_dir, ref_dir) {
                let preds = load_prediction_dirs(&pd, &rd)?;
                let cfg = match &checkpoint {
                    Some(c) => Some(open_checkpoint(c)?),
                    None => None,
                };
                let size = preds.first().map_or(0, |p| p.target.width());
                let summary = match &cfg {
                    Some(p) => evaluate_predictions(&preds, p.extractor().as_ref(), &metric_config(p.config.metrics.kid_block_size, size))?,
                    None => evaluate_predictions(&preds, &garb_core::metrics::IdentityExtractor::default(), &metric_config(50, size))?,
                };
                std::fs::create_dir_all(&out).at(&out)?;
                let csv = out.join("metrics.csv");
                std::fs::write(&csv, summary.overall.to_csv()).at(&csv)?;
                let js = out.join("summary.json");
                std::fs::write(&js, summary.to_json()?).at(&js)?;
                let t = summary.table(percent);
                (summary, t)
            } else {
                let checkpoint = checkpoint.ok_or_else(|| Error::Config("eval needs --checkpoint or --pred-dir/--ref-dir".into()))?;
                let p = open_checkpoint(&checkpoint)?;
                let data = data.unwrap_or_else(|| p.config.data.root.clone());
                let manifest = test_manifest(&data)?;
                let s = apply_sampler(p.config.sampler.clone(), &sampler);
                let preds = predict_manifest(&p, &manifest, limit, &s)?;
                let summary = evaluate_predictions(&preds, p.extractor().as_ref(), &metric_config(p.config.metrics.kid_block_size, p.image_size()))?;
                write_eval(&out, &preds, &summary)?;
                let t = summary.table(percent);
                (summary, t)
            };
            let _ = summary;
            print!("{table}");
        }
        Command::Sweep { checkpoint, data, out, limit, scales, step_grid, plot } => {
            let p = open_checkpoint(&checkpoint)?;
            let manifest = test_manifest(&data)?;
            let scales = scales.unwrap_or_else(|| p.config.sweep.guidance_scales.clone());
            let steps = step_grid.unwrap_or_else(|| p.config.sweep.steps.clone());
            let rows = run_sweep(&p, &manifest, limit, &scales, &steps, &p.config.sampler);
            std::fs::write(&out, sweep_csv(&rows)).at(&out)?;
            if let Some(plot) = plot {
                std::fs::write(&plot, sweep_svg(&rows)).at(&plot)?;
            }
            print!("{}", sweep_csv(&rows));
        }
        Command::P2p { data, pairing, out, checkpoint, limit, sampler } => {
            let manifest = test_manifest(&data)?;
            let mut lines = read_pairing(&pairing)?;
            if let Some(n) = limit {
                lines.truncate(n);
            }
            let pipeline = match &checkpoint {
                Some(c) => Some(open_checkpoint(c)?),
                None => None,
            };
            let (source, size, seed) = match &pipeline {
                Some(p) => {
                    let s = apply_sampler(p.config.sampler.clone(), &sampler);
                    let seed = s.seed;
                    (GarmentSource::Model { pipeline: p, sampler: s }, p.image_size(), seed)
                }
                None => {
                    let first = manifest.entries.first().ok_or_else(|| Error::Config("empty test manifest".into()))?;
                    let size = manifest.load_reference(first)?.width();
                    (GarmentSource::GroundTruth, size, sampler.seed.unwrap_or(0))
                }
            };
            let transfers = run_p2p(&manifest, &lines, &source, size, seed)?;
            write_p2p(&out, &transfers)?;
            println!("wrote {} transfers to {}", transfers.len(), out.display());
        }
    }
    Ok(())
}

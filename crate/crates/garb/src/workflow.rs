//! End-to-end training: codec, feature classifier, then the diffusion model on
//! frozen latents, with periodic checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use garb_core::flatshop::GarmentClass;
use garb_core::RgbImage;
use serde_json::json;

use crate::classifier::train_classifier;
use crate::codec::{images_to_tensor, psnr, train_codec};
use crate::config::RunConfig;
use crate::dataset::DatasetManifest;
use crate::error::{Error, IoContext, Result};
use crate::nn::ParamStore;
use crate::pipeline::Pipeline;
use crate::train::{DiffusionTrainer, TrainingSet};

pub const FINAL_DIR: &str = "final";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub codec_loss: Vec<f64>,
    pub codec_psnr: f64,
    pub classifier_loss: Vec<f64>,
    pub diffusion_loss: Vec<f64>,
    pub final_checkpoint: PathBuf,
}

/// Loaded training images, references deduplicated by file.
pub struct LoadedSplit {
    pub garments: Vec<RgbImage>,
    pub references: Vec<RgbImage>,
    pub classes: Vec<GarmentClass>,
}

pub fn load_split(manifest: &DatasetManifest, pipeline: &Pipeline) -> Result<LoadedSplit> {
    let mut cache: HashMap<String, RgbImage> = HashMap::new();
    let mut out = LoadedSplit { garments: Vec::new(), references: Vec::new(), classes: Vec::new() };
    for e in &manifest.entries {
        let garment = manifest.load_garment(e)?;
        if garment.width() != pipeline.image_size() || !garment.is_square() {
            return Err(Error::Manifest {
                path: manifest.garment_path(e),
                msg: format!("garment must be {0}x{0}", pipeline.image_size()),
            });
        }
        let reference = match cache.get(&e.reference_file) {
            Some(r) => r.clone(),
            None => {
                let r = pipeline.prepare_reference(&manifest.load_reference(e)?)?;
                cache.insert(e.reference_file.clone(), r.clone());
                r
            }
        };
        out.garments.push(garment);
        out.references.push(reference);
        out.classes.push(e.class);
    }
    Ok(out)
}

fn stack(images: &[RgbImage], pipeline: &Pipeline) -> Result<Tensor> {
    let mut parts = Vec::new();
    for chunk in images.chunks(64) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        parts.push(images_to_tensor(&refs, pipeline.dtype())?);
    }
    Ok(Tensor::cat(&parts, 0)?)
}

/// Mean reconstruction PSNR over `images`.
pub fn codec_psnr(pipeline: &Pipeline, images: &[RgbImage]) -> Result<f64> {
    let x = stack(images, pipeline)?;
    let mut rec = Vec::new();
    for i in (0..images.len()).step_by(64) {
        let n = 64.min(images.len() - i);
        // Detached so each chunk's autograd graph is dropped before the next.
        rec.push(pipeline.codec.reconstruct(&x.narrow(0, i, n)?)?.detach());
    }
    psnr(&Tensor::cat(&rec, 0)?, &x)
}

fn params_digest(store: &ParamStore) -> Result<Vec<(String, Vec<f64>)>> {
    store.snapshot()
}

/// Train every component from `data_root/train.tsv`, writing checkpoints and
/// `loss.csv` under `out_dir`.
pub fn run_training(cfg: &RunConfig, data_root: &Path, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let manifest = DatasetManifest::read(&data_root.join("train.tsv"))?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("training manifest is empty".into()));
    }
    let pipeline = Pipeline::new(cfg.clone())?;
    let data = load_split(&manifest, &pipeline)?;
    log::info!("loaded {} training pairs", data.garments.len());

    let codec_loss = train_codec(&pipeline.codec, &pipeline.codec_store, &cfg.codec, &data.garments, |e, l| {
        log::info!("codec epoch {} loss {l:.5}", e + 1)
    })?;
    let codec_psnr = codec_psnr(&pipeline, &data.garments)?;
    log::info!("codec PSNR {codec_psnr:.2} dB, latent scale {:.4}", pipeline.codec.scale()?);

    let classifier_loss =
        train_classifier(&pipeline.classifier, &pipeline.classifier_store, &cfg.classifier, &data.garments, &data.classes)?;
    log::info!("classifier loss {:?}", classifier_loss.last());

    let frozen = params_digest(&pipeline.codec_store)?;
    let garments = stack(&data.garments, &pipeline)?;
    let mut latents = Vec::new();
    for i in (0..data.garments.len()).step_by(64) {
        let n = 64.min(data.garments.len() - i);
        latents.push(pipeline.codec.encode(&garments.narrow(0, i, n)?)?.detach());
    }
    let set = TrainingSet {
        latents: Tensor::cat(&latents, 0)?,
        references: stack(&data.references, &pipeline)?,
        classes: data.classes.clone(),
    };
    drop(garments);

    let mut trainer = DiffusionTrainer::new(&pipeline.model, &pipeline.model_store, &pipeline.schedule, &cfg.train)?;
    let mut losses = Vec::with_capacity(cfg.train.total_steps);
    let mut csv = String::from("step,loss,lr\n");
    let loss_path = out_dir.join(LOSS_FILE);
    let meta = |step: usize, loss: f64| {
        let mut m = BTreeMap::new();
        m.insert("step".to_string(), json!(step));
        m.insert("loss".to_string(), json!(loss));
        m.insert("codec_psnr".to_string(), json!(codec_psnr));
        m
    };
    while trainer.steps_done() < cfg.train.total_steps {
        let lr = trainer.next_lr();
        let loss = match trainer.step(&set) {
            Ok(l) => l,
            Err(e) => {
                std::fs::write(&loss_path, &csv).at(&loss_path)?;
                return Err(e);
            }
        };
        let step = trainer.steps_done();
        losses.push(loss);
        let _ = writeln!(csv, "{step},{loss:.6},{lr:.8}");
        if step % 100 == 0 || step == cfg.train.total_steps {
            let recent = &losses[losses.len().saturating_sub(100)..];
            log::info!("step {step} loss {:.4} lr {lr:.2e}", recent.iter().sum::<f64>() / recent.len() as f64);
        }
        if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 && step < cfg.train.total_steps {
            pipeline.save(&out_dir.join(format!("step_{step:06}")), meta(step, loss))?;
            std::fs::write(&loss_path, &csv).at(&loss_path)?;
        }
    }
    if params_digest(&pipeline.codec_store)? != frozen {
        return Err(Error::Numerical("codec parameters changed during diffusion training".into()));
    }
    std::fs::write(&loss_path, &csv).at(&loss_path)?;
    let final_checkpoint = out_dir.join(FINAL_DIR);
    pipeline.save(&final_checkpoint, meta(cfg.train.total_steps, *losses.last().unwrap_or(&f64::NAN)))?;
    Ok(TrainReport { codec_loss, codec_psnr, classifier_loss, diffusion_loss: losses, final_checkpoint })
}

//! Diffusion training: noise-prediction MSE on frozen latents, with image-token
//! dropout for classifier-free guidance.

use candle_core::{DType, Device, Tensor};
use garb_core::flatshop::GarmentClass;
use garb_core::schedule::{LrSchedule, NoiseSchedule};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::TryOffModel;
use crate::nn::{flat_f64, mse, randn, ParamStore};
use crate::optim::{AdamW, AdamWConfig};

/// Training set held in memory: scaled garment latents, preprocessed
/// reference images in [-1, 1] and garment classes, all indexed alike.
pub struct TrainingSet {
    pub latents: Tensor,
    pub references: Tensor,
    pub classes: Vec<GarmentClass>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let ids = Tensor::new(ids.as_slice(), &Device::Cpu)?;
        Ok(Batch {
            latents: self.latents.index_select(&ids, 0)?,
            references: self.references.index_select(&ids, 0)?,
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
        })
    }
}

pub struct Batch {
    pub latents: Tensor,
    pub references: Tensor,
    pub classes: Vec<GarmentClass>,
}

/// Explicit randomness for one step, so a step can be replayed exactly.
pub struct StepNoise {
    pub timesteps: Vec<usize>,
    pub noise: Tensor,
    pub drop: Vec<bool>,
}

pub struct DiffusionTrainer<'a> {
    model: &'a TryOffModel,
    store: &'a ParamStore,
    schedule: &'a NoiseSchedule,
    cfg: TrainConfig,
    lr: LrSchedule,
    opt: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl<'a> DiffusionTrainer<'a> {
    pub fn new(
        model: &'a TryOffModel,
        store: &'a ParamStore,
        schedule: &'a NoiseSchedule,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let lr = LrSchedule::new(cfg.lr, cfg.warmup_steps.min(cfg.total_steps), cfg.total_steps)?;
        let opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..Default::default() });
        Ok(Self {
            model,
            store,
            schedule,
            cfg: cfg.clone(),
            lr,
            opt,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Learning rate used by the next step.
    pub fn next_lr(&self) -> f64 {
        self.lr.lr_at(self.step + 1)
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Draw timesteps uniformly from 1..=T, unit Gaussian noise and the
    /// dropout mask for a batch shaped like `latents`.
    pub fn draw_noise(&mut self, latents: &Tensor) -> Result<StepNoise> {
        let b = latents.dim(0)?;
        let t_max = self.schedule.len();
        let timesteps = (0..b).map(|_| self.rng.random_range(1..=t_max)).collect();
        let drop = (0..b).map(|_| self.rng.random::<f64>() < self.cfg.cond_dropout).collect();
        let noise = randn(&mut self.rng, latents.dims(), latents.dtype())?;
        Ok(StepNoise { timesteps, noise, drop })
    }

    /// One optimizer step on a sampled batch; returns the loss.
    pub fn step(&mut self, data: &TrainingSet) -> Result<f64> {
        let idx = self.next_indices(data.len());
        let batch = data.batch(&idx)?;
        let noise = self.draw_noise(&batch.latents)?;
        self.step_with(&batch, &noise)
    }

    /// One optimizer step with caller-supplied randomness.
    pub fn step_with(&mut self, batch: &Batch, noise: &StepNoise) -> Result<f64> {
        let loss = training_loss(self.model, self.schedule, batch, noise)?;
        let value = flat_f64(&loss)?[0];
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss {value} at step {}", self.step + 1)));
        }
        let grads = loss.backward()?;
        let lr = self.next_lr();
        self.opt.step(self.store, &grads, lr)?;
        self.step += 1;
        Ok(value)
    }
}

/// `|| eps - eps_theta(sqrt(ab) x0 + sqrt(1 - ab) eps, t, tokens, c) ||^2`, averaged.
pub fn training_loss(
    model: &TryOffModel,
    schedule: &NoiseSchedule,
    batch: &Batch,
    noise: &StepNoise,
) -> Result<Tensor> {
    let b = batch.latents.dim(0)?;
    let dtype = batch.latents.dtype();
    let mut a = Vec::with_capacity(b);
    let mut s = Vec::with_capacity(b);
    for &t in &noise.timesteps {
        let ab = schedule.alpha_bar(t)?;
        a.push(ab.sqrt());
        s.push((1.0 - ab).sqrt());
    }
    let a = Tensor::from_vec(a, (b, 1, 1, 1), &Device::Cpu)?.to_dtype(dtype)?;
    let s = Tensor::from_vec(s, (b, 1, 1, 1), &Device::Cpu)?.to_dtype(dtype)?;
    let x_t = (batch.latents.broadcast_mul(&a)? + noise.noise.broadcast_mul(&s)?)?;
    let tokens = model.image_tokens(&batch.references)?;
    let tokens = model.null.apply_mask(&tokens, &noise.drop)?;
    let pred = model.predict_noise(&x_t, &noise.timesteps, &tokens, &batch.classes)?;
    mse(&pred, &noise.noise)
}

/// Convert a dtype-agnostic list of f32 latents into one (N, C, h, w) tensor.
pub fn stack_latents(latents: &[Vec<f32>], c: usize, h: usize, w: usize, dtype: DType) -> Result<Tensor> {
    let flat: Vec<f32> = latents.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (latents.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

//! Trained components bundled for inference: reference image in, flat garment out.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use garb_core::flatshop::{pad_to_square, resize_bilinear, WHITE};
use garb_core::flatshop::GarmentClass;
use garb_core::metrics::{FeatureExtractor, IdentityExtractor};
use garb_core::sampler::{euler_sample, gaussian_noise, Branch, GuidedDenoiser, NoisePredictor};
use garb_core::schedule::{sigma_grid, NoiseSchedule};
use garb_core::RgbImage;

use crate::checkpoint::Checkpoint;
use crate::classifier::{ClassifierExtractor, GarmentClassifier};
use crate::codec::{images_to_tensor, tensor_to_images, Codec};
use crate::config::{ExtractorName, RunConfig, SamplerSettings};
use crate::error::{Error, Result};
use crate::model::TryOffModel;
use crate::nn::ParamStore;

pub struct Pipeline {
    pub config: RunConfig,
    pub codec_store: ParamStore,
    pub model_store: ParamStore,
    pub classifier_store: ParamStore,
    pub codec: Codec,
    pub model: TryOffModel,
    pub classifier: GarmentClassifier,
    pub schedule: NoiseSchedule,
}

impl Pipeline {
    /// Freshly initialized components in f32.
    pub fn new(config: RunConfig) -> Result<Self> {
        Self::with_dtype(config, DType::F32)
    }

    pub fn with_dtype(config: RunConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut codec_store = ParamStore::new(dtype);
        let codec = Codec::new(&config.codec, &mut codec_store)?;
        let mut model_store = ParamStore::new(dtype);
        let model = TryOffModel::new(
            &config.model,
            config.data.image_size,
            config.codec.latent_channels,
            config.schedule.timesteps,
            &mut model_store,
        )?;
        let mut classifier_store = ParamStore::new(dtype);
        let classifier = GarmentClassifier::new(&config.classifier, &mut classifier_store)?;
        let schedule = config.schedule.build()?;
        Ok(Self { config, codec_store, model_store, classifier_store, codec, model, classifier, schedule })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        let p = Self::new(ck.config()?)?;
        for store in [&p.codec_store, &p.model_store, &p.classifier_store] {
            ck.restore(store)?;
        }
        Ok(p)
    }

    pub fn save(&self, dir: &Path, metadata: BTreeMap<String, serde_json::Value>) -> Result<()> {
        Checkpoint::from_stores(&self.config, &[&self.codec_store, &self.model_store, &self.classifier_store], metadata)?
            .save(dir)
    }

    pub fn dtype(&self) -> DType {
        self.model_store.dtype()
    }

    pub fn image_size(&self) -> usize {
        self.config.data.image_size
    }

    /// Pad to a square with white and resize to the model resolution.
    pub fn prepare_reference(&self, img: &RgbImage) -> Result<RgbImage> {
        let sq = if img.is_square() { img.clone() } else { pad_to_square(img, WHITE) };
        if sq.width() == self.image_size() {
            Ok(sq)
        } else {
            Ok(resize_bilinear(&sq, self.image_size())?)
        }
    }

    pub fn extractor(&self) -> Box<dyn FeatureExtractor + '_> {
        match self.config.metrics.extractor {
            ExtractorName::Classifier => Box::new(ClassifierExtractor { net: &self.classifier, dtype: self.dtype() }),
            ExtractorName::Identity => Box::new(IdentityExtractor::default()),
        }
    }

    fn latent_dims(&self) -> (usize, usize, usize) {
        let s = self.config.latent_side();
        (self.config.codec.latent_channels, s, s)
    }

    /// Reconstruct the garment worn in each reference. Item `i` uses sampler
    /// noise seeded with `seeds[i]`; guidance and step count come from `sampler`.
    pub fn try_off_batch(
        &self,
        references: &[&RgbImage],
        classes: &[GarmentClass],
        seeds: &[u64],
        sampler: &SamplerSettings,
    ) -> Result<Vec<RgbImage>> {
        if references.len() != classes.len() || references.len() != seeds.len() || references.is_empty() {
            return Err(Error::Config("try-off batch needs matching, non-empty inputs".into()));
        }
        let prepared: Vec<RgbImage> = references.iter().map(|r| self.prepare_reference(r)).collect::<Result<_>>()?;
        let refs: Vec<&RgbImage> = prepared.iter().collect();
        let tokens = self.model.image_tokens(&images_to_tensor(&refs, self.dtype())?)?;
        let (c, h, w) = self.latent_dims();
        let per = c * h * w;
        let mut noise = Vec::with_capacity(per * seeds.len());
        for &s in seeds {
            noise.extend(gaussian_noise(per, s));
        }
        let core_cfg = sampler.to_core(seeds[0]);
        core_cfg.validate()?;
        let sigmas = sigma_grid(&self.schedule, core_cfg.n_steps, core_cfg.spacing)?;
        let predictor = ModelPredictor { model: &self.model, tokens, classes: classes.to_vec(), dims: (c, h, w) };
        let mut denoiser = GuidedDenoiser::new(predictor, &self.schedule, core_cfg.guidance_scale);
        let latent = euler_sample(&mut denoiser, &noise, &sigmas)?;
        let z = Tensor::from_vec(latent, (seeds.len(), c, h, w), &Device::Cpu)?.to_dtype(self.dtype())?;
        tensor_to_images(&self.codec.decode(&z)?)
    }

    pub fn try_off(&self, reference: &RgbImage, class: GarmentClass, seed: u64, sampler: &SamplerSettings) -> Result<RgbImage> {
        Ok(self.try_off_batch(&[reference], &[class], &[seed], sampler)?.remove(0))
    }
}

/// Noise predictor over a batch of latents flattened into one vector.
pub struct ModelPredictor<'a> {
    pub model: &'a TryOffModel,
    /// Conditional image tokens (B, n, m).
    pub tokens: Tensor,
    pub classes: Vec<GarmentClass>,
    pub dims: (usize, usize, usize),
}

impl ModelPredictor<'_> {
    fn run(&self, x: &[f32], timestep: usize, tokens: &Tensor, classes: &[GarmentClass]) -> Result<Vec<f32>> {
        let (c, h, w) = self.dims;
        let b = classes.len();
        if x.len() != b * c * h * w {
            return Err(Error::Config(format!("latent of {} values for batch {b}", x.len())));
        }
        let dtype = self.tokens.dtype();
        let xt = Tensor::from_vec(x.to_vec(), (b, c, h, w), &Device::Cpu)?.to_dtype(dtype)?;
        let ts = vec![timestep; b];
        let eps = self.model.predict_noise(&xt, &ts, tokens, classes)?;
        Ok(eps.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
    }
}

fn core_err(e: Error) -> garb_core::Error {
    match e {
        Error::Core(c) => c,
        other => garb_core::Error::Numerical(other.to_string()),
    }
}

impl NoisePredictor for ModelPredictor<'_> {
    fn predict(&mut self, x: &[f32], timestep: usize, branch: Branch) -> garb_core::Result<Vec<f32>> {
        let b = self.classes.len();
        let tokens = match branch {
            Branch::Conditional => self.tokens.clone(),
            Branch::Unconditional => self.model.null.batch(b).map_err(core_err)?,
        };
        self.run(x, timestep, &tokens, &self.classes).map_err(core_err)
    }

    /// Both branches in one network call on a doubled batch.
    fn predict_both(&mut self, x: &[f32], timestep: usize) -> garb_core::Result<(Vec<f32>, Vec<f32>)> {
        let go = || -> Result<(Vec<f32>, Vec<f32>)> {
            let b = self.classes.len();
            let null = self.model.null.batch(b)?;
            let tokens = Tensor::cat(&[&null, &self.tokens], 0)?;
            let mut xx = x.to_vec();
            xx.extend_from_slice(x);
            let mut classes = self.classes.clone();
            classes.extend_from_slice(&self.classes);
            let mut out = self.run(&xx, timestep, &tokens, &classes)?;
            let cond = out.split_off(x.len());
            Ok((out, cond))
        };
        go().map_err(core_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig};

    pub(crate) fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.image_size = 32;
        cfg.codec = CodecConfig { hidden_channels: vec![4, 8, 8], ..Default::default() };
        cfg.model = ModelConfig {
            token_dim: 16,
            tokens_out: 4,
            cond_dim: 16,
            embed_dim: 16,
            base_channels: 8,
            n_heads: 2,
            head_dim: 4,
            norm_groups: 2,
            ..Default::default()
        };
        cfg.schedule.timesteps = 50;
        cfg.sampler.steps = 3;
        cfg
    }

    #[test]
    fn batched_branches_match_single_calls() {
        let p = Pipeline::new(small_config()).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(0);
        p.model_store
            .set("unet.conv_out.weight", &crate::nn::randn(&mut rng, &[4, 8, 3, 3], DType::F32).unwrap())
            .unwrap();
        let img = RgbImage::new(32, 32, [120, 30, 200]);
        let tokens = p.model.image_tokens(&images_to_tensor(&[&img], DType::F32).unwrap()).unwrap();
        let mut pred = ModelPredictor { model: &p.model, tokens, classes: vec![GarmentClass::Dresses], dims: (4, 8, 8) };
        let x = gaussian_noise(256, 3);
        let (u, c) = pred.predict_both(&x, 10).unwrap();
        let u1 = pred.predict(&x, 10, Branch::Unconditional).unwrap();
        let c1 = pred.predict(&x, 10, Branch::Conditional).unwrap();
        for (a, b) in u.iter().zip(&u1).chain(c.iter().zip(&c1)) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(u.iter().zip(&c).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn guidance_one_never_touches_null_tokens() {
        let p = Pipeline::new(small_config()).unwrap();
        let img = RgbImage::new(32, 32, [255, 255, 255]);
        let s = SamplerSettings { guidance_scale: 1.0, ..p.config.sampler.clone() };
        p.try_off(&img, GarmentClass::UpperBody, 0, &s).unwrap();
        assert_eq!(p.model.null.calls(), 0);
        let s = SamplerSettings { guidance_scale: 2.0, ..s };
        p.try_off(&img, GarmentClass::UpperBody, 0, &s).unwrap();
        assert_eq!(p.model.null.calls(), 3);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = Pipeline::new(small_config()).unwrap();
        let img = garb_core::flatshop::render_pair(3, GarmentClass::LowerBody, 32).unwrap().reference;
        let s = p.config.sampler.clone();
        let a = p.try_off(&img, GarmentClass::LowerBody, 7, &s).unwrap();
        let b = p.try_off(&img, GarmentClass::LowerBody, 7, &s).unwrap();
        let c = p.try_off(&img, GarmentClass::LowerBody, 8, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.width(), a.height()), (32, 32));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(small_config()).unwrap();
        p.save(dir.path(), BTreeMap::new()).unwrap();
        let q = Pipeline::load(dir.path()).unwrap();
        let img = garb_core::flatshop::render_pair(1, GarmentClass::UpperBody, 32).unwrap().reference;
        let s = p.config.sampler.clone();
        assert_eq!(
            p.try_off(&img, GarmentClass::UpperBody, 1, &s).unwrap(),
            q.try_off(&img, GarmentClass::UpperBody, 1, &s).unwrap()
        );
    }

    #[test]
    fn non_square_input_is_padded_and_resized() {
        let p = Pipeline::new(small_config()).unwrap();
        let img = RgbImage::new(48, 64, [10, 10, 10]);
        let out = p.prepare_reference(&img).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert_eq!(out.get(0, 16), [255, 255, 255]);
        assert_eq!(out.get(16, 16), [10, 10, 10]);
    }
}

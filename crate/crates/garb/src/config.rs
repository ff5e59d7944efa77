//! Run configuration, serialized as JSON.

use std::path::{Path, PathBuf};

use garb_core::schedule::{BetaKind, NoiseSchedule, SigmaSpacing};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("data"), image_size: 64, n_train: 2000, n_test: 300, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub downsample_factor: usize,
    pub latent_channels: usize,
    /// Channel width at each resolution, finest first; one entry per halving plus one.
    pub hidden_channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            downsample_factor: 4,
            latent_channels: 4,
            hidden_channels: vec![16, 32, 64],
            epochs: 12,
            batch_size: 16,
            lr: 2e-3,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of the square patches turned into image tokens.
    pub patch_size: usize,
    /// Width of the raw image tokens.
    pub token_dim: usize,
    /// Number of adapted tokens fed to cross-attention.
    pub tokens_out: usize,
    /// Width of the adapted tokens.
    pub cond_dim: usize,
    /// Width of the timestep and class embeddings.
    pub embed_dim: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    /// Resolution levels (0 = finest) that carry cross-attention.
    pub attention_levels: Vec<usize>,
    pub n_heads: usize,
    pub head_dim: usize,
    pub norm_groups: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            token_dim: 128,
            tokens_out: 16,
            cond_dim: 128,
            embed_dim: 256,
            base_channels: 32,
            channel_multipliers: vec![1, 2],
            attention_levels: vec![0, 1],
            n_heads: 2,
            head_dim: 32,
            norm_groups: 8,
            seed: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKindName {
    Linear,
    ScaledLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: BetaKindName,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: BetaKindName::ScaledLinear, timesteps: 1000, beta_start: 0.00085, beta_end: 0.012 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let kind = match self.kind {
            BetaKindName::Linear => BetaKind::Linear,
            BetaKindName::ScaledLinear => BetaKind::ScaledLinear,
        };
        Ok(NoiseSchedule::build(kind, self.timesteps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Probability of replacing a sample's image tokens with the null tokens.
    pub cond_dropout: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup_steps: 2000,
            total_steps: 20000,
            weight_decay: 0.01,
            batch_size: 16,
            cond_dropout: 0.1,
            checkpoint_every: 2000,
            seed: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { channels: vec![8, 16, 32], epochs: 5, batch_size: 16, lr: 2e-3, seed: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingName {
    KarrasRho7,
    LinearIndex,
}

impl From<SpacingName> for SigmaSpacing {
    fn from(s: SpacingName) -> Self {
        match s {
            SpacingName::KarrasRho7 => SigmaSpacing::KarrasRho7,
            SpacingName::LinearIndex => SigmaSpacing::LinearIndex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    pub spacing: SpacingName,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { steps: 20, guidance_scale: 1.5, seed: 0, spacing: SpacingName::KarrasRho7 }
    }
}

impl SamplerSettings {
    pub fn to_core(&self, seed: u64) -> garb_core::sampler::SamplerConfig {
        garb_core::sampler::SamplerConfig {
            n_steps: self.steps,
            guidance_scale: self.guidance_scale as f32,
            seed,
            spacing: self.spacing.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorName {
    /// Small convolutional garment classifier trained alongside the model.
    Classifier,
    /// Parameter-free pooled RGB features.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub extractor: ExtractorName,
    pub kid_block_size: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { extractor: ExtractorName::Classifier, kid_block_size: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub guidance_scales: Vec<f64>,
    pub steps: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { guidance_scales: vec![1.0, 1.5, 2.0, 2.5, 3.0], steps: vec![5, 10, 20, 50] }
    }
}

/// Full-resolution reference settings, kept for shape checks and documentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceScale {
    pub image_size: usize,
    pub latent_channels: usize,
    pub downsample_factor: usize,
    pub tokens_in: usize,
    pub token_dim: usize,
    pub tokens_out: usize,
    pub cond_dim: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
}

impl Default for ReferenceScale {
    fn default() -> Self {
        Self {
            image_size: 512,
            latent_channels: 4,
            downsample_factor: 8,
            tokens_in: 1024,
            token_dim: 768,
            tokens_out: 77,
            cond_dim: 768,
            embed_dim: 1280,
            lr: 5e-5,
            warmup_steps: 15_000,
            total_steps: 150_000,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub sampler: SamplerSettings,
    pub metrics: MetricSettings,
    pub sweep: SweepConfig,
    pub reference_scale: ReferenceScale,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        // Through Value so key order is canonical (sorted).
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn latent_side(&self) -> usize {
        self.data.image_size / self.codec.downsample_factor
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.data.image_size;
        check(s >= 32 && s % 16 == 0, || format!("image_size {s} must be >= 32 and a multiple of 16"))?;
        let c = &self.codec;
        check(c.downsample_factor.is_power_of_two() && c.downsample_factor >= 2, || {
            format!("downsample_factor {} must be a power of two >= 2", c.downsample_factor)
        })?;
        check(s % c.downsample_factor == 0, || "image_size must divide by downsample_factor".into())?;
        let halvings = c.downsample_factor.trailing_zeros() as usize;
        check(c.hidden_channels.len() == halvings + 1, || {
            format!("hidden_channels needs {} entries for factor {}", halvings + 1, c.downsample_factor)
        })?;
        check(c.latent_channels > 0 && c.hidden_channels.iter().all(|&h| h > 0), || {
            "codec channel counts must be positive".into()
        })?;
        let m = &self.model;
        check(m.patch_size > 0 && s % m.patch_size == 0, || {
            format!("patch_size {} must divide image_size {s}", m.patch_size)
        })?;
        for (name, v) in [
            ("token_dim", m.token_dim),
            ("tokens_out", m.tokens_out),
            ("cond_dim", m.cond_dim),
            ("embed_dim", m.embed_dim),
            ("base_channels", m.base_channels),
            ("n_heads", m.n_heads),
            ("head_dim", m.head_dim),
        ] {
            check(v > 0, || format!("{name} must be positive"))?;
        }
        check(!m.channel_multipliers.is_empty(), || "channel_multipliers is empty".into())?;
        let levels = m.channel_multipliers.len();
        let latent = self.latent_side();
        check(latent % (1 << (levels - 1)) == 0, || {
            format!("latent side {latent} cannot be halved {} times", levels - 1)
        })?;
        check(m.attention_levels.iter().all(|&l| l < levels), || "attention level out of range".into())?;
        let widest = m.base_channels * m.channel_multipliers.iter().max().copied().unwrap_or(1);
        check(m.n_heads * m.head_dim <= widest, || {
            format!("n_heads * head_dim = {} exceeds the widest level ({widest})", m.n_heads * m.head_dim)
        })?;
        for mult in &m.channel_multipliers {
            let ch = m.base_channels * mult;
            check(*mult > 0 && ch % m.norm_groups == 0, || {
                format!("{ch} channels not divisible by {} norm groups", m.norm_groups)
            })?;
        }
        self.schedule.build()?;
        let t = &self.train;
        check(t.lr > 0.0 && t.batch_size > 0 && t.total_steps > 0, || {
            "train lr, batch_size and total_steps must be positive".into()
        })?;
        check((0.0..=1.0).contains(&t.cond_dropout), || "cond_dropout must lie in [0, 1]".into())?;
        check(self.sampler.steps > 0, || "sampler steps must be positive".into())?;
        check(self.sampler.guidance_scale >= 0.0, || "guidance_scale must be >= 0".into())?;
        check(!self.classifier.channels.is_empty(), || "classifier channels empty".into())?;
        Ok(())
    }

    /// Short stable hash of the canonical JSON, used to key cached artifacts.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.latent_side(), 16);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"total_steps": 7}}"#).unwrap();
        assert_eq!(cfg.train.total_steps, 7);
        assert_eq!(cfg.train.batch_size, 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.data.image_size = 40;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.head_dim = 64;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.codec.hidden_channels = vec![16, 32];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.train.cond_dropout = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        b.train.total_steps += 1;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }
}

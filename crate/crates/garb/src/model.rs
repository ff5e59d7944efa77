//! The class-conditioned try-off network: image tokens through the adapter,
//! `E_t[t] + E_c[c]` into every residual block, and the U-Net noise predictor.

use candle_core::Tensor;
use garb_core::flatshop::GarmentClass;

use crate::conditioning::{Adapter, Embeddings, NullTokens, TokenEncoder};
use crate::config::ModelConfig;
use crate::denoiser::UNet;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub struct TryOffModel {
    pub encoder: TokenEncoder,
    pub adapter: Adapter,
    pub embeddings: Embeddings,
    pub null: NullTokens,
    pub unet: UNet,
    pub latent_channels: usize,
}

impl TryOffModel {
    pub fn new(
        cfg: &ModelConfig,
        image_size: usize,
        latent_channels: usize,
        timesteps: usize,
        store: &mut ParamStore,
    ) -> Result<Self> {
        if image_size % cfg.patch_size != 0 {
            return Err(Error::Config("patch_size must divide image_size".into()));
        }
        let n_in = (image_size / cfg.patch_size).pow(2);
        let mut b = store.builder(cfg.seed);
        let encoder = TokenEncoder::new(&mut b, image_size, cfg.patch_size, cfg.token_dim)?;
        let adapter = Adapter::new(&mut b, n_in, cfg.tokens_out, cfg.token_dim, cfg.cond_dim)?;
        let embeddings = Embeddings::new(&mut b, timesteps, cfg.embed_dim)?;
        let null = NullTokens::new(&mut b, cfg.tokens_out, cfg.cond_dim)?;
        let unet = UNet::new(&mut b, cfg, latent_channels)?;
        Ok(Self { encoder, adapter, embeddings, null, unet, latent_channels })
    }

    /// Adapted image tokens (B, n_out, m) for references (B, 3, S, S) in [-1, 1].
    pub fn image_tokens(&self, images: &Tensor) -> Result<Tensor> {
        self.adapter.forward(&self.encoder.forward(images)?)
    }

    /// Noise prediction for noisy latents `x` (B, C, h, w).
    pub fn predict_noise(
        &self,
        x: &Tensor,
        timesteps: &[usize],
        tokens: &Tensor,
        classes: &[GarmentClass],
    ) -> Result<Tensor> {
        let b = x.dim(0)?;
        if timesteps.len() != b || classes.len() != b || tokens.dim(0)? != b {
            return Err(Error::Config(format!(
                "batch mismatch: latents {b}, timesteps {}, classes {}, tokens {}",
                timesteps.len(),
                classes.len(),
                tokens.dim(0)?
            )));
        }
        let e = self.embeddings.condition(timesteps, classes)?;
        self.unet.forward(x, &e, tokens)
    }
}

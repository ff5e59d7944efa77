//! Convolutional autoencoder mapping images in [-1, 1] to a small latent grid.
//!
//! `encode` returns latents divided by the stored `scale` (the standard
//! deviation of raw training latents), so the diffusion model sees roughly
//! unit-variance inputs; `decode` undoes the scaling.

use candle_core::{DType, Device, Tensor};
use garb_core::RgbImage;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::CodecConfig;
use crate::error::{Error, Result};
use crate::nn::{flat_f64, mse, upsample2, Conv2d, ParamStore};
use crate::optim::{AdamW, AdamWConfig};

pub struct Codec {
    enc: Vec<Conv2d>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec: Vec<Conv2d>,
    dec_out: Conv2d,
    scale_param: Tensor,
    pub latent_channels: usize,
    pub factor: usize,
}

impl Codec {
    /// Parameters go into `store` under the `codec.` prefix.
    pub fn new(cfg: &CodecConfig, store: &mut ParamStore) -> Result<Self> {
        let h = &cfg.hidden_channels;
        if h.len() != cfg.downsample_factor.trailing_zeros() as usize + 1 {
            return Err(Error::Config("hidden_channels does not match downsample_factor".into()));
        }
        let last = *h.last().expect("non-empty");
        let mut b = store.builder(cfg.seed);
        b.scope("codec", |b| {
            let mut enc = vec![Conv2d::new(b, "enc.0", 3, h[0], 3, 1)?];
            for i in 0..h.len() - 1 {
                enc.push(Conv2d::new(b, &format!("enc.{}", i + 1), h[i], h[i + 1], 3, 2)?);
            }
            enc.push(Conv2d::new(b, &format!("enc.{}", h.len()), last, last, 3, 1)?);
            let enc_out = Conv2d::new(b, "enc_out", last, cfg.latent_channels, 1, 1)?;
            let dec_in = Conv2d::new(b, "dec_in", cfg.latent_channels, last, 3, 1)?;
            let mut dec = vec![Conv2d::new(b, "dec.0", last, last, 3, 1)?];
            for i in (0..h.len() - 1).rev() {
                dec.push(Conv2d::new(b, &format!("dec.{}", dec.len()), h[i + 1], h[i], 3, 1)?);
            }
            let dec_out = Conv2d::new(b, "dec_out", h[0], 3, 3, 1)?;
            let scale_param = b.constant("latent_scale", &[1], 1.0, false)?;
            Ok(Self {
                enc,
                enc_out,
                dec_in,
                dec,
                dec_out,
                scale_param,
                latent_channels: cfg.latent_channels,
                factor: cfg.downsample_factor,
            })
        })
    }

    pub fn scale(&self) -> Result<f64> {
        Ok(flat_f64(&self.scale_param)?[0])
    }

    fn encode_raw(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for c in &self.enc {
            h = c.forward(&h)?.silu()?;
        }
        self.enc_out.forward(&h)
    }

    fn decode_raw(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.dec_in.forward(z)?.silu()?;
        h = self.dec[0].forward(&h)?.silu()?;
        for c in &self.dec[1..] {
            h = c.forward(&upsample2(&h)?)?.silu()?;
        }
        self.dec_out.forward(&h)
    }

    /// (B, 3, S, S) in [-1, 1] to (B, C, S/f, S/f), scaled.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_raw(x)?.broadcast_div(&self.scale_param)?)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decode_raw(&z.broadcast_mul(&self.scale_param)?)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode_raw(&self.encode_raw(x)?)
    }
}

/// Stack images into a (B, 3, S, S) tensor in [-1, 1].
pub fn images_to_tensor(images: &[&RgbImage], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Config("empty image batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for im in images {
        if im.width() != w || im.height() != h {
            return Err(Error::Config("images in a batch must share a size".into()));
        }
        data.extend(im.to_signed_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`images_to_tensor`], clamping to the valid range.
pub fn tensor_to_images(x: &Tensor) -> Result<Vec<RgbImage>> {
    let (b, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::Config(format!("expected 3 channels, got {c}")));
    }
    let flat = x.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let n = 3 * h * w;
    (0..b)
        .map(|i| Ok(RgbImage::from_signed_chw(w, h, &flat[i * n..(i + 1) * n])?))
        .collect()
}

/// PSNR in dB between two tensors in [-1, 1], measured on the [0, 1] scale.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = flat_f64(&mse(a, b)?)?[0] / 4.0;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Fit the autoencoder on `images` with pixel MSE, then set the latent scale
/// from the standard deviation of the raw latents. Returns per-epoch mean loss.
pub fn train_codec(
    codec: &Codec,
    store: &ParamStore,
    cfg: &CodecConfig,
    images: &[RgbImage],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Config("codec training needs at least one image".into()));
    }
    let dtype = store.dtype();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0DE);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let total_batches = cfg.epochs * images.len().div_ceil(cfg.batch_size);
    let mut seen = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&RgbImage> = chunk.iter().map(|&i| &images[i]).collect();
            let x = images_to_tensor(&batch, dtype)?;
            let loss = mse(&codec.reconstruct(&x)?, &x)?;
            let value = flat_f64(&loss)?[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("codec loss {value} in epoch {epoch}")));
            }
            let grads = loss.backward()?;
            // Cosine decay to 10% of the peak rate over all batches.
            let progress = seen as f64 / total_batches.max(1) as f64;
            let lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            opt.step(store, &grads, lr)?;
            seen += 1;
            sum += value;
            count += 1;
        }
        let mean = sum / count as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    let scale = raw_latent_std(codec, images, dtype)?;
    store.set("codec.latent_scale", &Tensor::new(&[scale], &Device::Cpu)?)?;
    Ok(history)
}

fn raw_latent_std(codec: &Codec, images: &[RgbImage], dtype: DType) -> Result<f64> {
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0usize);
    for chunk in images.chunks(32) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        let z = flat_f64(&codec.encode_raw(&images_to_tensor(&refs, dtype)?)?)?;
        s1 += z.iter().sum::<f64>();
        s2 += z.iter().map(|v| v * v).sum::<f64>();
        n += z.len();
    }
    let mean = s1 / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::Numerical("degenerate latent variance".into()));
    }
    Ok(var.sqrt())
}

//! Conditioning signals: image tokens from the reference photo, the adapter
//! that reshapes them for cross-attention, and the timestep + class embedding.

use std::cell::Cell;

use candle_core::{Device, Tensor};
use garb_core::flatshop::GarmentClass;

use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, LayerNorm, Linear};

/// Patch-embedding image encoder: a stride-`p` convolution plus a learned
/// position table, giving `(S/p)^2` tokens of width `token_dim`.
pub struct TokenEncoder {
    pub patch: Conv2d,
    pub position: Tensor,
}

impl TokenEncoder {
    pub fn new(b: &mut Builder, image_size: usize, patch: usize, token_dim: usize) -> Result<Self> {
        let n = (image_size / patch).pow(2);
        b.scope("image_encoder", |b| {
            let bound = 1.0 / ((3 * patch * patch) as f64).sqrt();
            let conv = b.scope("patch", |b| {
                let weight = b.uniform("weight", &[token_dim, 3, patch, patch], bound, true)?;
                let bias = b.uniform("bias", &[token_dim], bound, false)?;
                Ok(Conv2d { weight, bias, stride: patch, padding: 0 })
            })?;
            let position = b.normal("position", &[n, token_dim], 0.02, true)?;
            Ok(Self { patch: conv, position })
        })
    }

    pub fn n_tokens(&self) -> Result<usize> {
        Ok(self.position.dim(0)?)
    }

    /// (B, 3, S, S) to (B, n_in, token_dim).
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let y = self.patch.forward(images)?;
        let (b, d, h, w) = y.dims4()?;
        if h * w != self.n_tokens()? {
            return Err(Error::Config(format!(
                "image gives {} tokens, encoder expects {}",
                h * w,
                self.n_tokens()?
            )));
        }
        let tokens = y.reshape((b, d, h * w))?.transpose(1, 2)?.contiguous()?;
        Ok(tokens.broadcast_add(&self.position)?)
    }
}

/// Token mixing `(n_out x n_in)`, feature map `(token_dim -> cond_dim)`, layer norm.
pub struct Adapter {
    pub token_mix: Tensor,
    pub token_bias: Tensor,
    pub feature_map: Linear,
    pub norm: LayerNorm,
}

impl Adapter {
    pub fn new(b: &mut Builder, n_in: usize, n_out: usize, d_in: usize, m: usize) -> Result<Self> {
        b.scope("adapter", |b| {
            let bound = 1.0 / (n_in as f64).sqrt();
            let token_mix = b.uniform("token_mix.weight", &[n_out, n_in], bound, true)?;
            let token_bias = b.uniform("token_mix.bias", &[n_out, 1], bound, false)?;
            let feature_map = Linear::new(b, "feature_map", d_in, m, true)?;
            let norm = LayerNorm::new(b, "norm", m)?;
            Ok(Self { token_mix, token_bias, feature_map, norm })
        })
    }

    /// Output before the layer norm.
    pub fn mix(&self, raw: &Tensor) -> Result<Tensor> {
        let (b, n_in, d) = raw.dims3()?;
        let (n_out, k) = self.token_mix.dims2()?;
        if k != n_in {
            return Err(Error::Config(format!("adapter expects {k} tokens, got {n_in}")));
        }
        // The CPU matmul mishandles a stride-0 batched lhs; broadcast_matmul materializes it.
        let mixed = self.token_mix.broadcast_matmul(raw)?.broadcast_add(&self.token_bias)?;
        debug_assert_eq!(mixed.dims(), &[b, n_out, d]);
        self.feature_map.forward(&mixed)
    }

    /// (B, n_in, d_in) to (B, n_out, m).
    pub fn forward(&self, raw: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.mix(raw)?)
    }
}

/// Sinusoidal table used to initialize the learnable timestep embeddings.
pub fn sinusoidal_table(timesteps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; timesteps * dim];
    for t in 0..timesteps {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = (t + 1) as f64 * freq;
            out[t * dim + i] = a.sin();
            out[t * dim + half + i] = a.cos();
        }
    }
    out
}

/// Learnable timestep table `E_t` (T x d) and class table `E_c` (3 x d).
pub struct Embeddings {
    pub timestep: Tensor,
    pub class: Tensor,
}

impl Embeddings {
    pub fn new(b: &mut Builder, timesteps: usize, dim: usize) -> Result<Self> {
        b.scope("embed", |b| {
            let timestep =
                b.values("timestep", &[timesteps, dim], sinusoidal_table(timesteps, dim), true)?;
            let class = b.normal("class", &[GarmentClass::ALL.len(), dim], 1.0, true)?;
            Ok(Self { timestep, class })
        })
    }

    pub fn timesteps(&self) -> Result<usize> {
        Ok(self.timestep.dim(0)?)
    }

    /// `E_t[t] + E_c[c]` per batch entry, timesteps in `1..=T`.
    pub fn condition(&self, timesteps: &[usize], classes: &[GarmentClass]) -> Result<Tensor> {
        if timesteps.len() != classes.len() {
            return Err(Error::Config("timestep and class batches differ in length".into()));
        }
        let big_t = self.timesteps()?;
        if let Some(&bad) = timesteps.iter().find(|&&t| t == 0 || t > big_t) {
            return Err(Error::Config(format!("timestep {bad} outside 1..={big_t}")));
        }
        let t_idx: Vec<u32> = timesteps.iter().map(|&t| (t - 1) as u32).collect();
        let c_idx: Vec<u32> = classes.iter().map(|c| (c.id() - 1) as u32).collect();
        let t_idx = Tensor::new(t_idx.as_slice(), &Device::Cpu)?;
        let c_idx = Tensor::new(c_idx.as_slice(), &Device::Cpu)?;
        Ok((self.timestep.index_select(&t_idx, 0)? + self.class.index_select(&c_idx, 0)?)?)
    }
}

/// Learned stand-in for the image tokens on the unconditional branch. Counts
/// how often it replaced real tokens.
pub struct NullTokens {
    pub tokens: Tensor,
    calls: Cell<usize>,
}

impl NullTokens {
    pub fn new(b: &mut Builder, n_out: usize, m: usize) -> Result<Self> {
        let tokens = b.normal("null_tokens", &[n_out, m], 0.02, true)?;
        Ok(Self { tokens, calls: Cell::new(0) })
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    /// `batch` copies of the null tokens.
    pub fn batch(&self, batch: usize) -> Result<Tensor> {
        self.calls.set(self.calls.get() + 1);
        Ok(self.tokens.broadcast_left(batch)?.contiguous()?)
    }

    /// Replace rows of `tokens` (B, n, m) whose `mask` entry is set.
    pub fn apply_mask(&self, tokens: &Tensor, mask: &[bool]) -> Result<Tensor> {
        let b = tokens.dim(0)?;
        if mask.len() != b {
            return Err(Error::Config("dropout mask length differs from batch".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Ok(tokens.clone());
        }
        let keep: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        let keep = Tensor::from_vec(keep, (b, 1, 1), &Device::Cpu)?.to_dtype(tokens.dtype())?;
        let drop = keep.affine(-1.0, 1.0)?;
        let null = self.batch(b)?;
        Ok((tokens.broadcast_mul(&keep)? + null.broadcast_mul(&drop)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flat_f64, ParamStore};
    use candle_core::DType;

    #[test]
    fn reference_scale_adapter_shape() {
        let mut store = ParamStore::new(DType::F32);
        let mut b = store.builder(0);
        let ad = Adapter::new(&mut b, 1024, 77, 768, 768).unwrap();
        let raw = Tensor::zeros((1, 1024, 768), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(ad.forward(&raw).unwrap().dims(), &[1, 77, 768]);
        let bad = Tensor::zeros((1, 1000, 768), DType::F32, &Device::Cpu).unwrap();
        assert!(ad.forward(&bad).is_err());
    }

    #[test]
    fn batched_mix_matches_single_items() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(3);
        let ad = Adapter::new(&mut b, 4, 3, 5, 6).unwrap();
        let raw = crate::nn::randn(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2), &[3, 4, 5], DType::F64).unwrap();
        let all = flat_f64(&ad.mix(&raw).unwrap()).unwrap();
        for i in 0..3 {
            let one = flat_f64(&ad.mix(&raw.narrow(0, i, 1).unwrap()).unwrap()).unwrap();
            for (a, b) in one.iter().zip(&all[i * 18..(i + 1) * 18]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_image_gives_patch_bias_rows() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(5);
        let enc = TokenEncoder::new(&mut b, 16, 8, 6).unwrap();
        store.set("image_encoder.position", &Tensor::zeros((4, 6), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let x = Tensor::zeros((1, 3, 16, 16), DType::F64, &Device::Cpu).unwrap();
        let tok = flat_f64(&enc.forward(&x).unwrap()).unwrap();
        let bias = flat_f64(&enc.patch.bias).unwrap();
        for row in tok.chunks(6) {
            assert_eq!(row, bias.as_slice());
        }
    }

    #[test]
    fn adapter_rows_normalized_before_gain() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(7);
        let ad = Adapter::new(&mut b, 4, 3, 5, 6).unwrap();
        let raw = crate::nn::randn(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), &[2, 4, 5], DType::F64).unwrap();
        let out = flat_f64(&ad.forward(&raw).unwrap()).unwrap();
        for row in out.chunks(6) {
            let m = row.iter().sum::<f64>() / 6.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-3);
        }
    }

    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn embedding_indexing_and_range() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let e = Embeddings::new(&mut b, 10, 4).unwrap();
        let got = flat_f64(&e.condition(&[3], &[GarmentClass::Dresses]).unwrap()).unwrap();
        let t = flat_f64(&e.timestep).unwrap();
        let c = flat_f64(&e.class).unwrap();
        for k in 0..4 {
            assert_eq!(got[k], t[2 * 4 + k] + c[2 * 4 + k]);
        }
        assert!(e.condition(&[0], &[GarmentClass::Dresses]).is_err());
        assert!(e.condition(&[11], &[GarmentClass::Dresses]).is_err());
        assert!(e.condition(&[1, 2], &[GarmentClass::Dresses]).is_err());
    }

    #[test]
    fn null_mask_replaces_selected_rows() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let nt = NullTokens::new(&mut b, 2, 3).unwrap();
        let tok = Tensor::ones((3, 2, 3), DType::F64, &Device::Cpu).unwrap();
        let out = flat_f64(&nt.apply_mask(&tok, &[false, true, false]).unwrap()).unwrap();
        let null = flat_f64(&nt.tokens).unwrap();
        assert!(out[..6].iter().all(|&v| v == 1.0));
        assert_eq!(&out[6..12], null.as_slice());
        assert!(out[12..].iter().all(|&v| v == 1.0));
        assert_eq!(nt.calls(), 1);
        nt.apply_mask(&tok, &[false; 3]).unwrap();
        assert_eq!(nt.calls(), 1);
    }
}

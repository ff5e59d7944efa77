//! U-Net noise predictor over the latent grid.
//!
//! Each residual block adds a projection of the (timestep + class) embedding to
//! its normalized, activated input before the convolution; cross-attention
//! layers let every spatial position attend to the adapted image tokens.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{softmax_last, upsample2, Builder, Conv2d, GroupNorm, Linear};

/// `skip(x) + conv(act(norm(x)) + proj(e))`.
pub struct ResBlock {
    pub norm: GroupNorm,
    pub proj: Linear,
    pub conv: Conv2d,
    pub skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, embed: usize, groups: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Self {
                norm: GroupNorm::new(b, "norm", groups, c_in)?,
                proj: Linear::new(b, "embed_proj", embed, c_in, true)?,
                conv: Conv2d::new(b, "conv", c_in, c_out, 3, 1)?,
                skip: if c_in != c_out { Some(Conv2d::new(b, "skip", c_in, c_out, 1, 1)?) } else { None },
            })
        })
    }

    /// `x` is (B, C, H, W), `e` is (B, d).
    pub fn forward(&self, x: &Tensor, e: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let h = self.norm.forward(x)?.silu()?;
        let h = h.broadcast_add(&self.proj.forward(e)?.reshape((b, c, 1, 1))?)?;
        let h = self.conv.forward(&h)?;
        let s = match &self.skip {
            Some(sk) => sk.forward(x)?,
            None => x.clone(),
        };
        Ok((s + h)?)
    }
}

/// Pre-norm multi-head cross-attention with a residual connection; the output
/// projection bias starts at zero.
pub struct CrossAttention {
    pub norm: GroupNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl CrossAttention {
    pub fn new(b: &mut Builder, name: &str, channels: usize, cond_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        let inner = cfg.n_heads * cfg.head_dim;
        b.scope(name, |b| {
            let norm = GroupNorm::new(b, "norm", cfg.norm_groups, channels)?;
            let q = Linear::new(b, "to_q", channels, inner, false)?;
            let k = Linear::new(b, "to_k", cond_dim, inner, false)?;
            let v = Linear::new(b, "to_v", cond_dim, inner, false)?;
            let mut out = Linear::new(b, "to_out", inner, channels, false)?;
            out.bias = Some(b.constant("to_out.bias", &[channels], 0.0, false)?);
            Ok(Self { norm, q, k, v, out, heads: cfg.n_heads, head_dim: cfg.head_dim })
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, self.head_dim))?.transpose(1, 2)?.contiguous()?)
    }

    /// Attention weights (B, heads, HW, n_tokens) and the residual to add.
    pub fn attend(&self, x: &Tensor, tokens: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, c, h, w) = x.dims4()?;
        let seq = self.norm.forward(x)?.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?;
        let q = self.split_heads(&self.q.forward(&seq)?)?;
        let k = self.split_heads(&self.k.forward(tokens)?)?;
        let v = self.split_heads(&self.v.forward(tokens)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (self.head_dim as f64).sqrt())?;
        let weights = softmax_last(&scores)?;
        let mixed = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?;
        let mixed = mixed.reshape((b, h * w, self.heads * self.head_dim))?;
        let res = self.out.forward(&mixed)?.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?;
        Ok((weights, res))
    }

    pub fn forward(&self, x: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let (_, res) = self.attend(x, tokens)?;
        Ok((x + res)?)
    }
}

struct Level {
    block: ResBlock,
    attn: Option<CrossAttention>,
}

impl Level {
    fn forward(&self, x: &Tensor, e: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let h = self.block.forward(x, e)?;
        match &self.attn {
            Some(a) => a.forward(&h, tokens),
            None => Ok(h),
        }
    }
}

pub struct UNet {
    conv_in: Conv2d,
    down: Vec<Level>,
    downsample: Vec<Conv2d>,
    mid: ResBlock,
    mid_attn: CrossAttention,
    up: Vec<Level>,
    upsample: Vec<Conv2d>,
    out_norm: GroupNorm,
    conv_out: Conv2d,
}

impl UNet {
    pub fn new(b: &mut Builder, cfg: &ModelConfig, latent_channels: usize) -> Result<Self> {
        let chans: Vec<usize> = cfg.channel_multipliers.iter().map(|m| m * cfg.base_channels).collect();
        let (d, m, g) = (cfg.embed_dim, cfg.cond_dim, cfg.norm_groups);
        let levels = chans.len();
        b.scope("unet", |b| {
            let conv_in = Conv2d::new(b, "conv_in", latent_channels, chans[0], 3, 1)?;
            let mut down = Vec::new();
            let mut downsample = Vec::new();
            let mut prev = chans[0];
            for (l, &ch) in chans.iter().enumerate() {
                let block = ResBlock::new(b, &format!("down.{l}.res"), prev, ch, d, g)?;
                let attn = if cfg.attention_levels.contains(&l) {
                    Some(CrossAttention::new(b, &format!("down.{l}.attn"), ch, m, cfg)?)
                } else {
                    None
                };
                down.push(Level { block, attn });
                if l + 1 < levels {
                    downsample.push(Conv2d::new(b, &format!("down.{l}.downsample"), ch, ch, 3, 2)?);
                }
                prev = ch;
            }
            let mid = ResBlock::new(b, "mid.res", prev, prev, d, g)?;
            let mid_attn = CrossAttention::new(b, "mid.attn", prev, m, cfg)?;
            let mut up = Vec::new();
            let mut upsample = Vec::new();
            for l in (0..levels).rev() {
                let ch = chans[l];
                let block = ResBlock::new(b, &format!("up.{l}.res"), prev + ch, ch, d, g)?;
                let attn = if cfg.attention_levels.contains(&l) {
                    Some(CrossAttention::new(b, &format!("up.{l}.attn"), ch, m, cfg)?)
                } else {
                    None
                };
                up.push(Level { block, attn });
                if l > 0 {
                    upsample.push(Conv2d::new(b, &format!("up.{l}.upsample"), ch, ch, 3, 1)?);
                }
                prev = ch;
            }
            let out_norm = GroupNorm::new(b, "out_norm", g, chans[0])?;
            let conv_out = Conv2d::zeros(b, "conv_out", chans[0], latent_channels, 3)?;
            Ok(Self { conv_in, down, downsample, mid, mid_attn, up, upsample, out_norm, conv_out })
        })
    }

    /// `x` (B, C, h, w), embedding `e` (B, d), tokens (B, n, m).
    pub fn forward(&self, x: &Tensor, e: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let factor = 1 << (self.down.len() - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Config(format!("latent {h}x{w} not divisible by {factor}")));
        }
        let mut hcur = self.conv_in.forward(x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (l, level) in self.down.iter().enumerate() {
            hcur = level.forward(&hcur, e, tokens)?;
            skips.push(hcur.clone());
            if let Some(ds) = self.downsample.get(l) {
                hcur = ds.forward(&hcur)?;
            }
        }
        hcur = self.mid_attn.forward(&self.mid.forward(&hcur, e)?, tokens)?;
        for (i, level) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            hcur = level.forward(&Tensor::cat(&[&hcur, &skip], 1)?, e, tokens)?;
            if let Some(us) = self.upsample.get(i) {
                hcur = us.forward(&upsample2(&hcur)?)?;
            }
        }
        self.conv_out.forward(&self.out_norm.forward(&hcur)?.silu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flat_f64, ParamStore};
    use candle_core::{DType, Device};

    fn cfg() -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            n_heads: 2,
            head_dim: 4,
            norm_groups: 2,
            cond_dim: 6,
            embed_dim: 5,
            ..Default::default()
        }
    }

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn unet_shape_and_zero_init_output() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(1);
        let net = UNet::new(&mut b, &cfg(), 4).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(0);
        let x = crate::nn::randn(&mut rng, &[2, 4, 8, 8], DType::F64).unwrap();
        let e = crate::nn::randn(&mut rng, &[2, 5], DType::F64).unwrap();
        let tok = crate::nn::randn(&mut rng, &[2, 3, 6], DType::F64).unwrap();
        let y = net.forward(&x, &e, &tok).unwrap();
        assert_eq!(y.dims(), &[2, 4, 8, 8]);
        assert!(flat_f64(&y).unwrap().iter().all(|&v| v == 0.0));
        let odd = crate::nn::randn(&mut rng, &[1, 4, 7, 7], DType::F64).unwrap();
        assert!(net.forward(&odd, &e.narrow(0, 0, 1).unwrap(), &tok.narrow(0, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn res_block_one_by_one_hand_computed() {
        // One channel, one pixel: GroupNorm maps the pixel to 0, so the block
        // output is x + w_conv_center * (silu(0) + proj(e)) + b_conv.
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let blk = ResBlock::new(&mut b, "r", 1, 1, 2, 1).unwrap();
        store.set("r.embed_proj.weight", &t(vec![0.5, -1.0], &[1, 2])).unwrap();
        store.set("r.embed_proj.bias", &t(vec![0.25], &[1])).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 2.0;
        store.set("r.conv.weight", &t(k, &[1, 1, 3, 3])).unwrap();
        store.set("r.conv.bias", &t(vec![0.1], &[1])).unwrap();
        let y = blk.forward(&t(vec![3.0], &[1, 1, 1, 1]), &t(vec![2.0, 1.0], &[1, 2])).unwrap();
        // proj(e) = 0.5*2 - 1*1 + 0.25 = 0.25; conv = 2*0.25 + 0.1 = 0.6.
        assert!((flat_f64(&y).unwrap()[0] - 3.6).abs() < 1e-12);
    }

    #[test]
    fn res_block_embedding_changes_output() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(3);
        let blk = ResBlock::new(&mut b, "r", 4, 8, 3, 2).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(2);
        let x = crate::nn::randn(&mut rng, &[1, 4, 4, 4], DType::F64).unwrap();
        let e1 = crate::nn::randn(&mut rng, &[1, 3], DType::F64).unwrap();
        let e2 = crate::nn::randn(&mut rng, &[1, 3], DType::F64).unwrap();
        let a = flat_f64(&blk.forward(&x, &e1).unwrap()).unwrap();
        let c = flat_f64(&blk.forward(&x, &e2).unwrap()).unwrap();
        assert_eq!(a.len(), 8 * 16);
        assert!(a.iter().zip(&c).any(|(p, q)| (p - q).abs() > 1e-6));
    }

    fn attn(store: &mut ParamStore, channels: usize, cond: usize) -> CrossAttention {
        let mut b = store.builder(9);
        let c = ModelConfig { n_heads: 2, head_dim: 2, norm_groups: 1, ..Default::default() };
        CrossAttention::new(&mut b, "a", channels, cond, &c).unwrap()
    }

    #[test]
    fn zero_value_projection_is_identity() {
        let mut store = ParamStore::new(DType::F64);
        let a = attn(&mut store, 4, 3);
        store.set("a.to_v.weight", &Tensor::zeros((4, 3), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(4);
        let x = crate::nn::randn(&mut rng, &[1, 4, 2, 2], DType::F64).unwrap();
        let tok = crate::nn::randn(&mut rng, &[1, 5, 3], DType::F64).unwrap();
        assert_eq!(flat_f64(&a.forward(&x, &tok).unwrap()).unwrap(), flat_f64(&x).unwrap());
    }

    #[test]
    fn single_token_weights_are_one() {
        let mut store = ParamStore::new(DType::F64);
        let a = attn(&mut store, 4, 3);
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(5);
        let x = crate::nn::randn(&mut rng, &[1, 4, 2, 2], DType::F64).unwrap();
        let tok = crate::nn::randn(&mut rng, &[1, 1, 3], DType::F64).unwrap();
        let (w, res) = a.attend(&x, &tok).unwrap();
        assert!(flat_f64(&w).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        // Every position receives out(V row).
        let v = a.v.forward(&tok).unwrap();
        let want = flat_f64(&a.out.forward(&v).unwrap()).unwrap();
        let got = flat_f64(&res).unwrap();
        for ch in 0..4 {
            for p in 0..4 {
                assert!((got[ch * 4 + p] - want[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_keys_give_uniform_weights() {
        let mut store = ParamStore::new(DType::F64);
        let a = attn(&mut store, 4, 3);
        store.set("a.to_k.weight", &Tensor::zeros((4, 3), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(6);
        let x = crate::nn::randn(&mut rng, &[1, 4, 2, 2], DType::F64).unwrap();
        let tok = crate::nn::randn(&mut rng, &[1, 5, 3], DType::F64).unwrap();
        let (w, _) = a.attend(&x, &tok).unwrap();
        assert!(flat_f64(&w).unwrap().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }
}

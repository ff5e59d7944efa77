//! Parameter storage and the small set of layers the networks are built from.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A trainable tensor plus whether decoupled weight decay applies to it.
#[derive(Clone, Debug)]
pub struct Param {
    pub var: Var,
    pub decay: bool,
}

/// Named parameters of one network, iterated in name order.
#[derive(Debug)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { params: BTreeMap::new(), dtype, device: Device::Cpu }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize], decay: bool) -> Result<Tensor> {
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.params.insert(name, Param { var, decay });
        Ok(handle)
    }

    /// Overwrite a parameter in place; layers holding its tensor see the new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if p.var.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: expected {:?}, got {:?}",
                p.var.dims(),
                value.dims()
            )));
        }
        p.var.set(&value.to_dtype(self.dtype)?.contiguous()?)?;
        Ok(())
    }

    /// Flat f64 copy of every parameter in name order.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<f64>)>> {
        self.params
            .iter()
            .map(|(n, p)| Ok((n.clone(), flat_f64(p.var.as_tensor())?)))
            .collect()
    }

    /// Root builder drawing initial values from a ChaCha stream seeded with `seed`.
    pub fn builder(&mut self, seed: u64) -> Builder<'_> {
        Builder { store: self, rng: ChaCha8Rng::seed_from_u64(seed), prefix: String::new() }
    }
}

/// Flattened tensor values as f64.
pub fn flat_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

/// Creates parameters under a dotted name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    prefix: String,
}

impl Builder<'_> {
    /// Run `f` with the prefix extended by `name`.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() { name.to_string() } else { format!("{saved}.{name}") };
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, decay: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(self.full(name), v, shape, decay)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, decay: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        self.store.insert(self.full(name), v, shape, decay)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, decay: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.store.insert(self.full(name), vec![value; n], shape, decay)
    }

    pub fn values(&mut self, name: &str, shape: &[usize], values: Vec<f64>, decay: bool) -> Result<Tensor> {
        self.store.insert(self.full(name), values, shape, decay)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    pub fn new(b: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        b.scope(name, |b| {
            let weight = b.uniform("weight", &[d_out, d_in], bound, true)?;
            let bias = if bias { Some(b.uniform("bias", &[d_out], bound, false)?) } else { None };
            Ok(Self { weight, bias })
        })
    }

    /// Zero-initialized weight and bias.
    pub fn zeros(b: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        b.scope(name, |b| {
            let weight = b.constant("weight", &[d_out, d_in], 0.0, true)?;
            let bias = if bias { Some(b.constant("bias", &[d_out], 0.0, false)?) } else { None };
            Ok(Self { weight, bias })
        })
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        b: &mut Builder,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        b.scope(name, |b| {
            let weight = b.uniform("weight", &[c_out, c_in, kernel, kernel], bound, true)?;
            let bias = b.uniform("bias", &[c_out], bound, false)?;
            Ok(Self { weight, bias, stride, padding: kernel / 2 })
        })
    }

    pub fn zeros(b: &mut Builder, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        b.scope(name, |b| {
            let weight = b.constant("weight", &[c_out, c_in, kernel, kernel], 0.0, true)?;
            let bias = b.constant("bias", &[c_out], 0.0, false)?;
            Ok(Self { weight, bias, stride: 1, padding: kernel / 2 })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(b: &mut Builder, name: &str, groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!("{channels} channels cannot form {groups} groups")));
        }
        b.scope(name, |b| {
            let gain = b.constant("weight", &[channels], 1.0, false)?;
            let bias = b.constant("bias", &[channels], 0.0, false)?;
            Ok(Self { groups, gain, bias, eps: 1e-5 })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = x.reshape((n, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(2)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape((n, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gain.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        b.scope(name, |b| {
            let gain = b.constant("weight", &[dim], 1.0, false)?;
            let bias = b.constant("bias", &[dim], 0.0, false)?;
            Ok(Self { gain, bias, eps: 1e-5 })
        })
    }

    /// Normalizes over the last axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

/// Softmax over the last axis; the subtracted max is detached.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Nearest-neighbour doubling of both spatial axes.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

/// Mean squared error over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Seeded standard-normal tensor (independent of the backend's own RNG).
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn names_are_scoped_and_unique() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        Linear::new(&mut b, "a", 2, 3, true).unwrap();
        b.scope("blk", |b| Conv2d::new(b, "conv", 2, 2, 3, 1).map(|_| ())).unwrap();
        assert!(Linear::new(&mut b, "a", 2, 3, true).is_err());
        let names: Vec<_> = store.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, ["a.bias", "a.weight", "blk.conv.bias", "blk.conv.weight"]);
        assert!(!store.get("a.bias").unwrap().decay);
        assert!(store.get("a.weight").unwrap().decay);
    }

    #[test]
    fn same_seed_same_init() {
        let mk = |seed| {
            let mut s = ParamStore::new(DType::F32);
            let mut b = s.builder(seed);
            Linear::new(&mut b, "l", 4, 4, true).unwrap();
            s.snapshot().unwrap()
        };
        assert_eq!(mk(3), mk(3));
        assert_ne!(mk(3), mk(4));
    }

    #[test]
    fn set_updates_layer_view() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let lin = Linear::zeros(&mut b, "l", 2, 1, true).unwrap();
        store.set("l.weight", &t(&[1.0, 2.0], &[1, 2])).unwrap();
        store.set("l.bias", &t(&[0.5], &[1])).unwrap();
        let y = lin.forward(&t(&[3.0, 4.0], &[1, 2])).unwrap();
        assert_eq!(flat_f64(&y).unwrap(), vec![11.5]);
        assert!(store.set("l.weight", &t(&[1.0], &[1, 1])).is_err());
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let ln = LayerNorm::new(&mut b, "ln", 4).unwrap();
        let y = ln.forward(&t(&[1.0, 2.0, 3.0, 10.0, -1.0, 0.0, 0.0, 1.0], &[2, 4])).unwrap();
        let v = flat_f64(&y).unwrap();
        for row in v.chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn group_norm_matches_manual() {
        let mut store = ParamStore::new(DType::F64);
        let mut b = store.builder(0);
        let gn = GroupNorm::new(&mut b, "gn", 2, 4).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i * i) as f64 * 0.1).collect();
        let y = flat_f64(&gn.forward(&t(&x, &[1, 4, 2, 2])).unwrap()).unwrap();
        for g in 0..2 {
            let s = &x[g * 8..(g + 1) * 8];
            let m = s.iter().sum::<f64>() / 8.0;
            let var = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0;
            for i in 0..8 {
                let want = (s[i] - m) / (var + 1e-5).sqrt();
                assert!((y[g * 8 + i] - want).abs() < 1e-12);
            }
        }
        assert!(GroupNorm::new(&mut store.builder(0), "bad", 3, 4).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_handle_large_logits() {
        let y = softmax_last(&t(&[1000.0, 1000.0, 0.0, 1.0, 2.0, 3.0], &[2, 3])).unwrap();
        let v = flat_f64(&y).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12 && v[2] == 0.0);
        assert!((v[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let y = upsample2(&t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2])).unwrap();
        assert_eq!(
            flat_f64(&y).unwrap(),
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn stride_two_conv_halves_resolution() {
        let mut store = ParamStore::new(DType::F32);
        let mut b = store.builder(1);
        let c = Conv2d::new(&mut b, "c", 3, 5, 3, 2).unwrap();
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(c.forward(&x).unwrap().dims(), &[2, 5, 8, 8]);
    }
}

//! Small convolutional garment classifier used as the feature extractor for
//! DISTS, FID and KID.
//!
//! Stages are the RGB input followed by each stride-2 convolution's
//! activations; the embedding is the global average of the last stage.

use candle_core::{DType, Device, Tensor, D};
use garb_core::flatshop::GarmentClass;
use garb_core::metrics::{FeatureExtractor, FeatureMap};
use garb_core::RgbImage;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::images_to_tensor;
use crate::config::ClassifierConfig;
use crate::error::{Error, Result};
use crate::nn::{flat_f64, Conv2d, Linear, ParamStore};
use crate::optim::{AdamW, AdamWConfig};

pub struct GarmentClassifier {
    convs: Vec<Conv2d>,
    head: Linear,
}

impl GarmentClassifier {
    /// Parameters go under the `classifier.` prefix.
    pub fn new(cfg: &ClassifierConfig, store: &mut ParamStore) -> Result<Self> {
        if cfg.channels.is_empty() {
            return Err(Error::Config("classifier needs at least one stage".into()));
        }
        let mut b = store.builder(cfg.seed);
        b.scope("classifier", |b| {
            let mut convs = Vec::new();
            let mut prev = 3;
            for (i, &c) in cfg.channels.iter().enumerate() {
                convs.push(Conv2d::new(b, &format!("conv.{i}"), prev, c, 3, 2)?);
                prev = c;
            }
            let head = Linear::new(b, "head", prev, GarmentClass::ALL.len(), true)?;
            Ok(Self { convs, head })
        })
    }

    /// Activations of every conv stage for a (B, 3, S, S) batch.
    pub fn stage_tensors(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h)?.silu()?;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn pooled(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.stage_tensors(x)?.pop().expect("non-empty");
        Ok(last.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.pooled(x)?)
    }

    /// Predicted class per image.
    pub fn classify(&self, images: &[&RgbImage], dtype: DType) -> Result<Vec<GarmentClass>> {
        let logits = flat_f64(&self.logits(&images_to_tensor(images, dtype)?)?)?;
        logits
            .chunks(GarmentClass::ALL.len())
            .map(|row| {
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                Ok(GarmentClass::ALL[best])
            })
            .collect()
    }
}

fn cross_entropy(logits: &Tensor, labels: &[GarmentClass]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    let mut onehot = vec![0f64; b * k];
    for (i, c) in labels.iter().enumerate() {
        onehot[i * k + c.id() - 1] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (b, k), &Device::Cpu)?.to_dtype(logits.dtype())?;
    let m = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let logp = shifted.broadcast_sub(&lse)?;
    Ok((logp * onehot)?.sum_all()?.affine(-1.0 / b as f64, 0.0)?)
}

/// Fit on (garment image, class) pairs. Returns per-epoch mean loss.
pub fn train_classifier(
    net: &GarmentClassifier,
    store: &ParamStore,
    cfg: &ClassifierConfig,
    images: &[RgbImage],
    labels: &[GarmentClass],
) -> Result<Vec<f64>> {
    if images.len() != labels.len() || images.is_empty() {
        return Err(Error::Config("classifier needs matching, non-empty images and labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1A5);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&RgbImage> = chunk.iter().map(|&i| &images[i]).collect();
            let y: Vec<GarmentClass> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = cross_entropy(&net.logits(&images_to_tensor(&batch, store.dtype())?)?, &y)?;
            let grads = loss.backward()?;
            opt.step(store, &grads, cfg.lr)?;
            sum += flat_f64(&loss)?[0];
            n += 1;
        }
        history.push(sum / n as f64);
    }
    Ok(history)
}

/// [`FeatureExtractor`] view of a trained classifier.
pub struct ClassifierExtractor<'a> {
    pub net: &'a GarmentClassifier,
    pub dtype: DType,
}

impl FeatureExtractor for ClassifierExtractor<'_> {
    fn name(&self) -> &str {
        "garment-classifier"
    }

    fn stages(&self, image: &RgbImage) -> garb_core::Result<Vec<FeatureMap>> {
        let run = || -> Result<Vec<FeatureMap>> {
            let mut maps = vec![FeatureMap::from_planes(&image.to_planes())];
            for t in self.net.stage_tensors(&images_to_tensor(&[image], self.dtype)?)? {
                let (_, c, h, w) = t.dims4()?;
                maps.push(FeatureMap { channels: c, width: w, height: h, data: flat_f64(&t)? });
            }
            Ok(maps)
        };
        run().map_err(|e| garb_core::Error::Numerical(e.to_string()))
    }

    fn embedding(&self, image: &RgbImage) -> garb_core::Result<Vec<f64>> {
        let run = || flat_f64(&self.net.pooled(&images_to_tensor(&[image], self.dtype)?)?);
        run().map_err(|e| garb_core::Error::Numerical(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use garb_core::flatshop::render_pair;

    #[test]
    fn learns_garment_classes() {
        let mut store = ParamStore::new(DType::F32);
        let cfg = ClassifierConfig { epochs: 30, lr: 5e-3, ..Default::default() };
        let net = GarmentClassifier::new(&cfg, &mut store).unwrap();
        let pairs: Vec<_> = (0..48).map(|i| render_pair(i / 3, GarmentClass::ALL[i as usize % 3], 32).unwrap()).collect();
        let images: Vec<RgbImage> = pairs.iter().map(|p| p.garment.clone()).collect();
        let labels: Vec<GarmentClass> = pairs.iter().map(|p| p.garment_class).collect();
        let hist = train_classifier(&net, &store, &cfg, &images, &labels).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let refs: Vec<&RgbImage> = images.iter().collect();
        let pred = net.classify(&refs, DType::F32).unwrap();
        let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(acc >= 40, "{acc}/48");
    }

    #[test]
    fn extractor_stage_shapes() {
        let mut store = ParamStore::new(DType::F32);
        let net = GarmentClassifier::new(&ClassifierConfig::default(), &mut store).unwrap();
        let ex = ClassifierExtractor { net: &net, dtype: DType::F32 };
        let img = RgbImage::new(32, 32, [200, 10, 10]);
        let st = ex.stages(&img).unwrap();
        let dims: Vec<_> = st.iter().map(|m| (m.channels, m.width)).collect();
        assert_eq!(dims, [(3, 32), (8, 16), (16, 8), (32, 4)]);
        assert_eq!(ex.embedding(&img).unwrap().len(), 32);
    }
}

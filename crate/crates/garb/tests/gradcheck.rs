//! Backpropagated gradients of the diffusion loss against central finite
//! differences, in f64.

mod common;

use candle_core::{DType, Device, Tensor};
use garb::codec::images_to_tensor;
use garb::nn::{flat_f64, randn};
use garb::pipeline::Pipeline;
use garb::train::{training_loss, Batch, StepNoise};
use garb_core::flatshop::{render_pair, GarmentClass};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PARAMS: [&str; 10] = [
    "image_encoder.patch.weight",
    "image_encoder.position",
    "adapter.token_mix.weight",
    "adapter.feature_map.weight",
    "embed.timestep",
    "null_tokens",
    "unet.conv_in.weight",
    "attn.to_q.weight",
    "embed_proj.weight",
    "unet.conv_out.weight",
];

#[test]
fn loss_gradients_match_finite_differences() {
    let p = Pipeline::with_dtype(common::small_config(), DType::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // The output conv starts at zero, which would zero every upstream gradient.
    let w = p.model_store.get("unet.conv_out.weight").unwrap().var.dims().to_vec();
    p.model_store.set("unet.conv_out.weight", &(randn(&mut rng, &w, DType::F64).unwrap() * 0.1).unwrap()).unwrap();

    let a = render_pair(1, GarmentClass::UpperBody, 32).unwrap();
    let b = render_pair(2, GarmentClass::Dresses, 32).unwrap();
    let batch = Batch {
        latents: randn(&mut rng, &[2, 4, 8, 8], DType::F64).unwrap(),
        references: images_to_tensor(&[&a.reference, &b.reference], DType::F64).unwrap(),
        classes: vec![GarmentClass::UpperBody, GarmentClass::Dresses],
    };
    let noise = StepNoise {
        timesteps: vec![7, 31],
        noise: randn(&mut rng, &[2, 4, 8, 8], DType::F64).unwrap(),
        drop: vec![false, true],
    };
    let loss = || flat_f64(&training_loss(&p.model, &p.schedule, &batch, &noise).unwrap()).unwrap()[0];
    let grads = training_loss(&p.model, &p.schedule, &batch, &noise).unwrap().backward().unwrap();

    for pattern in PARAMS {
        let (name, param) = p
            .model_store
            .iter()
            .find(|(n, _)| n.contains(pattern))
            .unwrap_or_else(|| panic!("no parameter matching {pattern}"));
        let g = flat_f64(grads.get(param.var.as_tensor()).unwrap_or_else(|| panic!("no gradient for {name}"))).unwrap();
        let (k, &analytic) = g.iter().enumerate().max_by(|x, y| x.1.abs().total_cmp(&y.1.abs())).unwrap();
        assert!(analytic.abs() > 1e-10, "{name} has a vanishing gradient");
        let base = flat_f64(param.var.as_tensor()).unwrap();
        let dims = param.var.dims().to_vec();
        let eval_at = |delta: f64| {
            let mut v = base.clone();
            v[k] += delta;
            p.model_store.set(name, &Tensor::from_vec(v, dims.as_slice(), &Device::Cpu).unwrap()).unwrap();
            loss()
        };
        let h = 1e-5;
        let numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        p.model_store.set(name, &Tensor::from_vec(base, dims.as_slice(), &Device::Cpu).unwrap()).unwrap();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        assert!(rel < 1e-3, "{name}[{k}]: analytic {analytic}, numeric {numeric}, rel {rel}");
    }
}

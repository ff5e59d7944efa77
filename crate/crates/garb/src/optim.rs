//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Per-parameter first/second moments keyed by parameter name.
///
/// Decay is applied only to parameters flagged `decay` in the store (weights and
/// embedding tables, not biases or norm gains). Update order per step:
/// `p <- p * (1 - lr * wd)`, then `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub struct AdamW {
    cfg: AdamWConfig,
    state: BTreeMap<String, Moments>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, state: BTreeMap::new(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `store` that received a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in store.iter() {
            let Some(g) = grads.get(p.var.as_tensor()) else { continue };
            let g = g.detach();
            let st = match self.state.get_mut(name) {
                Some(s) => s,
                None => {
                    let z = g.zeros_like()?;
                    self.state.entry(name.clone()).or_insert(Moments { m: z.clone(), v: z })
                }
            };
            st.m = ((&st.m * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            st.v = ((&st.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&st.m / bc1)?;
            let v_hat = (&st.v / bc2)?;
            let current = p.var.as_tensor().detach();
            let decayed = if p.decay && c.weight_decay != 0.0 {
                (&current * (1.0 - lr * c.weight_decay))?
            } else {
                current
            };
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let next = (decayed - (update * lr)?)?;
            p.var.set(&next)?;
        }
        Ok(())
    }
}

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::networks::ParamStore;

/// Adam with bias correction; moments are kept per parameter name so they can
/// be checkpointed alongside the weights.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let moments = params
            .iter()
            .map(|(name, var)| {
                let z = var.as_tensor().zeros_like()?;
                Ok((name.clone(), (z.clone(), z)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            moments,
        })
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = g.detach();
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("optimizer has no state for {name}")))?;
            *m = (m.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?.detach();
            *v = (v.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?.detach();
            let denom = v.affine(1.0 / bias2, 0.0)?.sqrt()?.affine(1.0, self.eps)?;
            let update = (m.affine(self.lr / bias1, 0.0)? / denom)?;
            var.set(&(var.as_tensor() - update)?.detach())?;
        }
        Ok(())
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.moments
            .iter()
            .flat_map(|(name, (m, v))| {
                [
                    (format!("{prefix}m.{name}"), m.clone()),
                    (format!("{prefix}v.{name}"), v.clone()),
                ]
            })
            .collect()
    }

    pub fn load(&mut self, source: &HashMap<String, Tensor>, prefix: &str, steps: u64) -> Result<()> {
        for (name, (m, v)) in self.moments.iter_mut() {
            for (kind, slot) in [("m", m), ("v", v)] {
                let key = format!("{prefix}{kind}.{name}");
                let t = source
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
                if t.dims() != slot.dims() {
                    return Err(Error::Checkpoint(format!("optimizer tensor {key} has wrong shape")));
                }
                *slot = t.to_dtype(slot.dtype())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named trainable parameters of one network, iterated in name order.
#[derive(Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `value` under `name` and return the tensor handle layers keep.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<Tensor> {
        let name = name.into();
        let var = Var::from_tensor(&value)?;
        let handle = var.as_tensor().clone();
        if self.vars.insert(name.clone(), var).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        Ok(handle)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn tensors(&self, prefix: &str) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (format!("{prefix}{k}"), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrite every parameter from `source[prefix + name]`.
    pub fn load(&self, source: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let t = source
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            hash_tensor(&mut hasher, var.as_tensor())?;
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

pub(crate) fn hash_tensor(hasher: &mut Sha256, t: &Tensor) -> Result<()> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    for v in flat {
        hasher.update(v.to_le_bytes());
    }
    Ok(())
}

/// Seeded initializers. Candle's CPU RNG cannot be seeded, so every random
/// tensor in the crate comes through here.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub dtype: DType,
    pub device: &'a Device,
}

impl Init<'_> {
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Ok(Tensor::from_vec(data, shape, self.device)?.to_dtype(self.dtype)?)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| std * standard_normal(self.rng)).collect();
        Ok(Tensor::from_vec(data, shape, self.device)?.to_dtype(self.dtype)?)
    }
}

/// Box–Muller standard normal draw.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

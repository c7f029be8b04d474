//! Prototype memory addressed by cosine-similarity softmax with hard shrinkage.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::layers::{l2_normalize_rows, softmax_last};
use crate::networks::params::{Init, ParamStore};

pub const SHRINK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Addressing {
    /// Every bottleneck location is addressed independently.
    PerLocation,
    /// The spatially pooled bottleneck vector is addressed once per sample.
    Global,
}

/// `K×Q` matrix of memory items with shrinkage threshold `λ`.
#[derive(Clone)]
pub struct MemoryBank {
    pub items: Tensor,
    pub shrink: f64,
}

pub struct Addressed {
    /// Read-out `ẑ = ŵ·M`, shape `N×Q`.
    pub read: Tensor,
    /// Normalized, shrunk weights `ŵ`, shape `N×K`.
    pub weights: Tensor,
    /// Rows whose shrunk weights were all zero and fell back to the softmax.
    pub fallbacks: usize,
}

impl MemoryBank {
    pub fn new(slots: usize, dim: usize, shrink: f64, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        if slots == 0 || dim == 0 {
            return Err(Error::Contract("memory bank needs K ≥ 1 and Q ≥ 1".into()));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let items = store.insert("memory.items", init.uniform(&[slots, dim], bound)?)?;
        Ok(Self { items, shrink })
    }

    pub fn from_items(items: Tensor, shrink: f64) -> Self {
        Self { items, shrink }
    }

    pub fn slots(&self) -> usize {
        self.items.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.items.dims()[1]
    }

    pub fn address(&self, queries: &Tensor) -> Result<Addressed> {
        memory_address(queries, &self.items, self.shrink)
    }
}

/// Address the memory with the rows of `queries` (`N×Q`).
///
/// `w = softmax_i cos(z, m_i)`, `ĥ_i = relu(w_i − λ)·w_i / (|w_i − λ| + ε)`,
/// `ŵ = ĥ / ‖ĥ‖₁`, `ẑ = ŵ·M`. Rows where every `ĥ_i` is zero keep `w`.
pub fn memory_address(queries: &Tensor, items: &Tensor, shrink: f64) -> Result<Addressed> {
    let (_, q) = queries.dims2()?;
    let (_, q2) = items.dims2()?;
    if q != q2 {
        return Err(Error::Shape(format!("query dim {q} vs memory dim {q2}")));
    }
    let cos = l2_normalize_rows(queries)?.matmul(&l2_normalize_rows(items)?.t()?)?;
    let w = softmax_last(&cos)?;
    let shifted = w.affine(1.0, -shrink)?;
    let shrunk = (shifted.relu()? * &w)?.div(&(shifted.abs()? + SHRINK_EPS)?)?;
    let mass = shrunk.sum_keepdim(D::Minus1)?;
    let keep = mass.gt(0.0)?;
    let fallbacks = keep.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    let fallbacks = queries.dims()[0] - fallbacks as usize;
    let weights = if fallbacks == 0 {
        shrunk.broadcast_div(&mass)?
    } else {
        let keep = keep.broadcast_as(w.shape())?;
        let chosen = keep.where_cond(&shrunk, &w)?;
        chosen.broadcast_div(&chosen.sum_keepdim(D::Minus1)?)?
    };
    let read = weights.matmul(items)?;
    Ok(Addressed {
        read,
        weights,
        fallbacks,
    })
}

//! Patch critic shared by the discriminator and the normalcy classifier.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::layers::{leaky_relu, Conv2d, ConvSpec};
use crate::networks::params::{Init, ParamStore};
use crate::synthesis::scda_attention;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub channels: usize,
    /// Width of the first hidden stage; each later stage doubles it.
    pub base_width: usize,
    /// Hidden stages; all but the last downsample by 2.
    pub stages: usize,
}

impl CriticConfig {
    /// The four-stage 70×70 patch critic.
    pub fn reference() -> Self {
        Self {
            channels: 3,
            base_width: 64,
            stages: 4,
        }
    }

    fn specs(&self) -> (Vec<ConvSpec>, ConvSpec) {
        let mut in_c = self.channels;
        let hidden: Vec<ConvSpec> = (0..self.stages)
            .map(|i| {
                let out = self.base_width << i;
                let stride = if i + 1 == self.stages { 1 } else { 2 };
                let s = ConvSpec::new(in_c, out, 4, stride, 1);
                in_c = out;
                s
            })
            .collect();
        (hidden, ConvSpec::new(in_c, 1, 4, 1, 1))
    }

    pub fn num_params(&self) -> usize {
        let (hidden, head) = self.specs();
        hidden.iter().map(ConvSpec::num_params).sum::<usize>() + head.num_params()
    }

    /// Spatial size of the final hidden features (the attention resolution).
    pub fn feature_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (hidden, _) = self.specs();
        hidden.iter().fold((h, w), |(h, w), s| s.output_size(h, w))
    }
}

pub struct PatchCritic {
    pub config: CriticConfig,
    hidden: Vec<Conv2d>,
    head: Conv2d,
}

pub struct CriticOutput {
    /// `B×1×S×S` patch logits.
    pub logits: Tensor,
    /// Activations of the last hidden conv layer, `B×d×h×w`.
    pub features: Tensor,
}

impl CriticOutput {
    /// Mean of each sample's logit map, shape `B`.
    pub fn scores(&self) -> Result<Tensor> {
        critic_score(&self.logits)
    }
}

/// Reduce a `B×1×S×S` (or `B×S×S`) logit map to one score per sample by its mean.
pub fn critic_score(logits: &Tensor) -> Result<Tensor> {
    let b = logits.dims()[0];
    Ok(logits.reshape((b, ()))?.mean(D::Minus1)?)
}

impl PatchCritic {
    pub fn new(config: CriticConfig, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        if config.stages == 0 || config.base_width == 0 {
            return Err(Error::Contract("critic needs ≥1 stage and positive width".into()));
        }
        let (hidden, head) = config.specs();
        let hidden = hidden
            .into_iter()
            .enumerate()
            .map(|(i, s)| Conv2d::trainable(s, &format!("conv{i}"), store, init))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::trainable(head, "head", store, init)?;
        Ok(Self { config, hidden, head })
    }

    pub fn forward(&self, x: &Tensor) -> Result<CriticOutput> {
        let mut h = x.clone();
        for conv in &self.hidden {
            h = leaky_relu(&conv.forward(&h)?, 0.2)?;
        }
        let logits = self.head.forward(&h)?;
        Ok(CriticOutput { logits, features: h })
    }

    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)?.scores()
    }

    /// SCDA attention over the last hidden features, `B×h×w` in `[0, 1]`.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        scda_attention(&self.forward(x)?.features)
    }
}

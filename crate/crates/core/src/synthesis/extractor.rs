//! Randomly initialized residual network used as a frozen feature extractor.
//!
//! Weights are drawn once from a seeded Kaiming-normal initializer and never
//! registered as trainable. Batch normalization at initialization is an
//! identity map up to `1/√(1+ε)`, so it is omitted; the attention map built on
//! top is min-max normalized and insensitive to that scale.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::networks::layers::{Conv2d, ConvSpec};
use crate::networks::params::{hash_tensor, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Residual depth: 18, 34, 50, 101 or 152.
    pub depth: usize,
    /// Residual stages kept (1..=4); 4 means everything before the classifier.
    pub stages: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            depth: 50,
            stages: 4,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    fn layout(&self) -> Result<(bool, [usize; 4])> {
        let blocks = match self.depth {
            18 => (false, [2, 2, 2, 2]),
            34 => (false, [3, 4, 6, 3]),
            50 => (true, [3, 4, 6, 3]),
            101 => (true, [3, 4, 23, 3]),
            152 => (true, [3, 8, 36, 3]),
            d => return Err(Error::Config(format!("unsupported extractor depth {d}"))),
        };
        if !(1..=4).contains(&self.stages) {
            return Err(Error::Config(format!("extractor stages must be 1..=4, got {}", self.stages)));
        }
        Ok(blocks)
    }
}

struct Block {
    convs: Vec<Conv2d>,
    shortcut: Option<Conv2d>,
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i < last {
                h = h.relu()?;
            }
        }
        let identity = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((h + identity)?.relu()?)
    }
}

pub struct FrozenFeatureExtractor {
    pub config: ExtractorConfig,
    stem: Conv2d,
    blocks: Vec<Block>,
    out_channels: usize,
}

fn frozen_conv(spec: ConvSpec, init: &mut Init) -> Result<Conv2d> {
    // Kaiming normal, fan-out mode, as torchvision initializes residual nets.
    let fan_out = (spec.out_channels * spec.kernel * spec.kernel) as f64;
    let w = init.normal(
        &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
        (2.0 / fan_out).sqrt(),
    )?;
    Ok(Conv2d::from_parts(spec.no_bias(), w, None))
}

impl FrozenFeatureExtractor {
    pub fn new(config: ExtractorConfig, dtype: DType, device: &Device) -> Result<Self> {
        let (bottleneck, counts) = config.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init {
            rng: &mut rng,
            dtype,
            device,
        };
        let stem = frozen_conv(ConvSpec::new(3, 64, 7, 2, 3), &mut init)?;
        let expansion = if bottleneck { 4 } else { 1 };
        let mut in_c = 64;
        let mut blocks = Vec::new();
        for (stage, &count) in counts.iter().enumerate().take(config.stages) {
            let width = 64 << stage;
            for b in 0..count {
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                let out_c = width * expansion;
                let convs = if bottleneck {
                    vec![
                        frozen_conv(ConvSpec::new(in_c, width, 1, 1, 0), &mut init)?,
                        frozen_conv(ConvSpec::new(width, width, 3, stride, 1), &mut init)?,
                        frozen_conv(ConvSpec::new(width, out_c, 1, 1, 0), &mut init)?,
                    ]
                } else {
                    vec![
                        frozen_conv(ConvSpec::new(in_c, width, 3, stride, 1), &mut init)?,
                        frozen_conv(ConvSpec::new(width, width, 3, 1, 1), &mut init)?,
                    ]
                };
                let shortcut = if stride != 1 || in_c != out_c {
                    Some(frozen_conv(ConvSpec::new(in_c, out_c, 1, stride, 0), &mut init)?)
                } else {
                    None
                };
                blocks.push(Block { convs, shortcut });
                in_c = out_c;
            }
        }
        Ok(Self {
            config,
            stem,
            blocks,
            out_channels: in_c,
        })
    }

    pub fn dtype(&self) -> DType {
        self.stem.weight.dtype()
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Features `B×d×h×w` of a `B×3×H×W` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.to_dtype(self.stem.weight.dtype())?;
        let h = self.stem.forward(&x)?.relu()?;
        // ReLU outputs are ≥ 0, so zero padding equals -inf padding for the max pool.
        let h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        let mut h = h.max_pool2d_with_stride(3, 2)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    pub fn num_params(&self) -> usize {
        let mut n = self.stem.spec().num_params();
        for b in &self.blocks {
            n += b.convs.iter().map(|c| c.spec().num_params()).sum::<usize>();
            n += b.shortcut.as_ref().map_or(0, |c| c.spec().num_params());
        }
        n
    }

    /// SHA-256 over every weight, in construction order.
    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hash_tensor(&mut hasher, &self.stem.weight)?;
        for b in &self.blocks {
            for c in b.convs.iter().chain(b.shortcut.iter()) {
                hash_tensor(&mut hasher, &c.weight)?;
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

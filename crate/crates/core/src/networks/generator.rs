//! Memory-augmented encoder-decoder for future-frame prediction.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::layers::{Conv2d, ConvSpec};
use crate::networks::memory::{Addressing, MemoryBank};
use crate::networks::params::{Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of input frames `T`.
    pub frames: usize,
    pub channels: usize,
    /// Encoder stage widths, shallow to deep; the deepest width is the memory dim `Q`.
    pub widths: Vec<usize>,
    pub convs_per_stage: usize,
    pub memory_slots: usize,
    pub shrink: f64,
    pub addressing: Addressing,
}

impl GeneratorConfig {
    /// Widths 64-128-256-512, two convs per stage, 2000×512 memory.
    pub fn reference() -> Self {
        Self {
            frames: 4,
            channels: 3,
            widths: vec![64, 128, 256, 512],
            convs_per_stage: 2,
            memory_slots: 2000,
            shrink: 0.0005,
            addressing: Addressing::PerLocation,
        }
    }

    pub fn memory_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn downsampling(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.convs_per_stage == 0 || self.frames == 0 || self.channels == 0 {
            return Err(Error::Contract("generator needs ≥1 stage, ≥1 conv per stage, T ≥ 1, C ≥ 1".into()));
        }
        Ok(())
    }

    fn encoder_specs(&self) -> Vec<Vec<ConvSpec>> {
        let mut in_c = self.frames * self.channels;
        self.widths
            .iter()
            .map(|&w| {
                (0..self.convs_per_stage)
                    .map(|j| {
                        let spec = ConvSpec::new(if j == 0 { in_c } else { w }, w, 3, 1, 1);
                        in_c = w;
                        spec
                    })
                    .collect()
            })
            .collect()
    }

    /// Decoder stages from deep to shallow: (up-conv, fuse convs).
    fn decoder_specs(&self) -> Vec<(ConvSpec, Vec<ConvSpec>)> {
        (0..self.widths.len() - 1)
            .rev()
            .map(|i| {
                let w = self.widths[i];
                let up = ConvSpec::new(self.widths[i + 1], w, 3, 1, 1);
                let fuse = (0..self.convs_per_stage)
                    .map(|j| ConvSpec::new(if j == 0 { 2 * w } else { w }, w, 3, 1, 1))
                    .collect();
                (up, fuse)
            })
            .collect()
    }

    fn output_spec(&self) -> ConvSpec {
        ConvSpec::new(self.widths[0], self.channels, 3, 1, 1)
    }

    /// Exact trainable parameter count, memory included.
    pub fn num_params(&self) -> usize {
        let enc: usize = self.encoder_specs().iter().flatten().map(ConvSpec::num_params).sum();
        let dec: usize = self
            .decoder_specs()
            .iter()
            .map(|(up, fuse)| up.num_params() + fuse.iter().map(ConvSpec::num_params).sum::<usize>())
            .sum();
        enc + dec + self.output_spec().num_params() + self.memory_slots * self.memory_dim()
    }

    /// Analytic multiply-accumulates of one forward pass on an `h×w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut total = 0u64;
        let mut dims = Vec::new();
        let (mut ch, mut cw) = (h, w);
        for (i, stage) in self.encoder_specs().iter().enumerate() {
            if i > 0 {
                ch /= 2;
                cw /= 2;
            }
            dims.push((ch, cw));
            total += stage.iter().map(|s| s.macs(ch, cw)).sum::<u64>();
        }
        let rows = match self.addressing {
            Addressing::PerLocation => (ch * cw) as u64,
            Addressing::Global => 1,
        };
        // cosine similarities plus the weighted read-out
        total += 2 * rows * (self.memory_slots * self.memory_dim()) as u64;
        for (k, (up, fuse)) in self.decoder_specs().iter().enumerate() {
            let (sh, sw) = dims[self.widths.len() - 2 - k];
            total += up.macs(sh, sw) + fuse.iter().map(|s| s.macs(sh, sw)).sum::<u64>();
        }
        total + self.output_spec().macs(h, w)
    }
}

struct DecoderStage {
    up: Conv2d,
    fuse: Vec<Conv2d>,
}

pub struct Generator {
    pub config: GeneratorConfig,
    encoder: Vec<Vec<Conv2d>>,
    pub memory: MemoryBank,
    decoder: Vec<DecoderStage>,
    output: Conv2d,
}

pub struct GeneratorOutput {
    /// Predicted frames `B×C×H×W` in `[-1, 1]`.
    pub frame: Tensor,
    /// Memory addressing weights `ŵ`, one row per addressed query.
    pub weights: Tensor,
    pub fallbacks: usize,
}

impl Generator {
    pub fn new(config: GeneratorConfig, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let encoder = config
            .encoder_specs()
            .into_iter()
            .enumerate()
            .map(|(i, stage)| {
                stage
                    .into_iter()
                    .enumerate()
                    .map(|(j, s)| Conv2d::trainable(s, &format!("enc{i}.conv{j}"), store, init))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let memory = MemoryBank::new(config.memory_slots, config.memory_dim(), config.shrink, store, init)?;
        let depth = config.widths.len();
        let decoder = config
            .decoder_specs()
            .into_iter()
            .enumerate()
            .map(|(k, (up, fuse))| {
                let level = depth - 2 - k;
                Ok(DecoderStage {
                    up: Conv2d::trainable(up, &format!("dec{level}.up"), store, init)?,
                    fuse: fuse
                        .into_iter()
                        .enumerate()
                        .map(|(j, s)| Conv2d::trainable(s, &format!("dec{level}.conv{j}"), store, init))
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Conv2d::trainable(config.output_spec(), "out", store, init)?;
        Ok(Self {
            config,
            encoder,
            memory,
            decoder,
            output,
        })
    }

    /// `x` is `B×(T·C)×H×W`, frames concatenated along channels in time order.
    pub fn forward(&self, x: &Tensor) -> Result<GeneratorOutput> {
        let (_, c, h, w) = x.dims4()?;
        let expected = self.config.frames * self.config.channels;
        let factor = self.config.downsampling();
        if c != expected || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "generator input {:?}: needs {expected} channels and spatial dims divisible by {factor}",
                x.dims()
            )));
        }
        let last = self.encoder.len() - 1;
        let mut skips = Vec::with_capacity(last);
        let mut hcur = x.clone();
        for (i, stage) in self.encoder.iter().enumerate() {
            if i > 0 {
                hcur = hcur.max_pool2d(2)?;
            }
            for (j, conv) in stage.iter().enumerate() {
                hcur = conv.forward(&hcur)?;
                // the bottleneck stays linear so cosine addressing sees signed features
                if !(i == last && j == stage.len() - 1) {
                    hcur = hcur.relu()?;
                }
            }
            if i < last {
                skips.push(hcur.clone());
            }
        }

        let (b, q, bh, bw) = hcur.dims4()?;
        let (read, weights, fallbacks) = match self.config.addressing {
            Addressing::PerLocation => {
                let z = hcur.permute((0, 2, 3, 1))?.reshape((b * bh * bw, q))?;
                let a = self.memory.address(&z)?;
                let read = a.read.reshape((b, bh, bw, q))?.permute((0, 3, 1, 2))?.contiguous()?;
                (read, a.weights, a.fallbacks)
            }
            Addressing::Global => {
                let z = hcur.mean(D::Minus1)?.mean(D::Minus1)?;
                let a = self.memory.address(&z)?;
                let read = a.read.reshape((b, q, 1, 1))?.broadcast_as((b, q, bh, bw))?.contiguous()?;
                (read, a.weights, a.fallbacks)
            }
        };

        let mut hcur = read;
        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let (_, _, sh, sw) = skip.dims4()?;
            hcur = stage.up.forward(&hcur.upsample_nearest2d(sh, sw)?)?.relu()?;
            hcur = Tensor::cat(&[&skip, &hcur], 1)?;
            for conv in &stage.fuse {
                hcur = conv.forward(&hcur)?.relu()?;
            }
        }
        let frame = self.output.forward(&hcur)?.tanh()?;
        Ok(GeneratorOutput {
            frame,
            weights,
            fallbacks,
        })
    }
}

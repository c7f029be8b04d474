//! Trainable networks: the memory-augmented generator and the patch critics.

pub mod critic;
pub mod generator;
pub mod layers;
pub mod memory;
pub mod params;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, Array4};

pub use critic::{critic_score, CriticConfig, CriticOutput, PatchCritic};
pub use generator::{Generator, GeneratorConfig, GeneratorOutput};
pub use memory::{memory_address, Addressed, Addressing, MemoryBank};
pub use params::ParamStore;

use crate::error::{Error, Result};
use crate::ingest::Frame;

/// Stack frames into a `B×C×H×W` tensor.
pub fn frames_to_tensor(frames: &[&Array3<f32>], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::EmptyBatch("no frames to stack".into()))?;
    let (c, h, w) = first.dim();
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        if f.dim() != (c, h, w) {
            return Err(Error::Shape(format!("frame {:?} vs {:?}", f.dim(), (c, h, w))));
        }
        data.extend(f.iter().copied());
    }
    Ok(Tensor::from_vec(data, (frames.len(), c, h, w), device)?.to_dtype(dtype)?)
}

/// Concatenate each clip's `T` input frames along channels: `B×(T·C)×H×W`.
pub fn inputs_to_tensor(inputs: &[Vec<&Array3<f32>>], dtype: DType, device: &Device) -> Result<Tensor> {
    let per_clip = inputs
        .iter()
        .map(|frames| {
            let t = frames_to_tensor(frames, dtype, device)?;
            let (n, c, h, w) = t.dims4()?;
            Ok(t.reshape((1, n * c, h, w))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&per_clip, 0)?)
}

/// Split a `B×C×H×W` tensor back into per-sample arrays.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Array3<f32>>> {
    let (b, c, h, w) = t.dims4()?;
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let all = Array4::from_shape_vec((b, c, h, w), data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(all.outer_iter().map(|a| a.to_owned()).collect())
}

/// Run the generator on `T` frames and return the predicted frame.
pub fn generator_predict(inputs: &[Frame], model: &Generator) -> Result<Array3<f32>> {
    if inputs.len() != model.config.frames {
        return Err(Error::Shape(format!(
            "generator expects {} frames, got {}",
            model.config.frames,
            inputs.len()
        )));
    }
    let dtype = model.memory.items.dtype();
    let device = model.memory.items.device().clone();
    let refs: Vec<&Array3<f32>> = inputs.iter().map(|f| &f.pixels).collect();
    let x = inputs_to_tensor(&[refs], dtype, &device)?;
    let out = model.forward(&x)?;
    Ok(tensor_to_frames(&out.frame)?.remove(0))
}

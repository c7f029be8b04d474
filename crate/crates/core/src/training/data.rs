use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSource, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::{build_manifest, clip_count, clip_indices, DatasetKind, DatasetManifest, Frame, FrameStore};
use crate::losses::mask_to_resolution;
use crate::networks::{frames_to_tensor, inputs_to_tensor};
use crate::synthesis::{
    donor_mask, paste, sample_paste_box, BinaryMask, FrozenFeatureExtractor, Provenance, MAX_RETRIES,
};

/// A manifest file (`.json`) or a frame-directory root to scan.
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    if path.extension().is_some_and(|e| e == "json") {
        let m = DatasetManifest::load(path)?;
        m.validate()?;
        Ok(m)
    } else {
        build_manifest(path, kind)
    }
}

pub struct Batch {
    /// `B×(T·C)×H×W`
    pub inputs: Tensor,
    /// `B×C×H×W`
    pub targets: Tensor,
    /// Pseudo-abnormal frames `ṽ`, `B×C×H×W`.
    pub pseudo: Tensor,
    /// `M̃` at classifier feature resolution, `B×h×w`.
    pub masks_small: Tensor,
    pub provenance: Vec<Provenance>,
    /// Samples whose paste stayed empty after every redraw.
    pub empty_pastes: usize,
}

/// Clip and donor sampling for training.
pub struct TrainingData {
    pub frames: DatasetManifest,
    pub donors: Option<DatasetManifest>,
    clips: Vec<(usize, usize)>,
    window: usize,
    store: FrameStore,
    extractor: FrozenFeatureExtractor,
    threshold: f64,
    masks: HashMap<(String, usize), BinaryMask>,
}

impl TrainingData {
    pub fn new(cfg: &TrainConfig, extractor: FrozenFeatureExtractor) -> Result<Self> {
        let ti = match &cfg.ti_root {
            Some(p) => Some(load_dataset(p, DatasetKind::Ti)?),
            None => None,
        };
        let vad = match &cfg.train_root {
            Some(p) => Some(load_dataset(p, DatasetKind::VadTrain)?),
            None => None,
        };
        let frames = match cfg.generator_source {
            DataSource::Ti => ti
                .clone()
                .ok_or_else(|| Error::Config("generator_source = \"ti\" needs ti_root".into()))?,
            _ => vad.ok_or_else(|| Error::Config("train_root is required".into()))?,
        };
        let donors = match cfg.donor_source {
            DataSource::Vad => None,
            DataSource::Ti => Some(ti.ok_or_else(|| Error::Config("donor_source = \"ti\" needs ti_root".into()))?),
            DataSource::Auto => ti,
        };
        let window = cfg.generator.frames;
        let clips: Vec<(usize, usize)> = frames
            .videos
            .iter()
            .enumerate()
            .flat_map(|(v, e)| (0..clip_count(e.frame_count, window)).map(move |s| (v, s)))
            .collect();
        if clips.is_empty() {
            return Err(Error::EmptyBatch(format!(
                "no video has the {} frames a training clip needs",
                window + 1
            )));
        }
        if let Some(d) = &donors {
            if d.total_frames() == 0 {
                return Err(Error::EmptyBatch("donor set has no frames".into()));
            }
        }
        Ok(Self {
            frames,
            donors,
            clips,
            window,
            store: FrameStore::new(cfg.image_size, cfg.frame_cache),
            extractor,
            threshold: cfg.mask_threshold,
            masks: HashMap::new(),
        })
    }

    pub fn num_clips(&self) -> usize {
        self.clips.len()
    }

    pub fn extractor(&self) -> &FrozenFeatureExtractor {
        &self.extractor
    }

    fn mask_for(&mut self, donor: &Frame) -> Result<BinaryMask> {
        let key = (donor.source_id.clone(), donor.index);
        if let Some(m) = self.masks.get(&key) {
            return Ok(m.clone());
        }
        let m = donor_mask(donor, &self.extractor, self.threshold)?;
        self.masks.insert(key, m.clone());
        Ok(m)
    }

    fn draw_donor(&self, inputs: &[Frame], rng: &mut ChaCha8Rng) -> Result<Frame> {
        match &self.donors {
            None => Ok(inputs[rng.random_range(0..inputs.len())].clone()),
            Some(set) => {
                let mut k = rng.random_range(0..set.total_frames());
                for v in &set.videos {
                    if k < v.frame_count {
                        return self.store.frame(v, k);
                    }
                    k -= v.frame_count;
                }
                unreachable!("index below total frame count")
            }
        }
    }

    /// Draw `batch` clips and one pseudo anomaly per clip.
    pub fn sample(
        &mut self,
        batch: usize,
        feature_hw: (usize, usize),
        rng: &mut ChaCha8Rng,
        dtype: DType,
        device: &Device,
    ) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        let mut pseudo: Vec<Array3<f32>> = Vec::with_capacity(batch);
        let mut masks = Vec::with_capacity(batch);
        let mut provenance = Vec::with_capacity(batch);
        let mut empty_pastes = 0;
        for _ in 0..batch {
            let (v, start) = self.clips[rng.random_range(0..self.clips.len())];
            let entry = self.frames.videos[v].clone();
            let (input_idx, target_idx) = clip_indices(entry.frame_count, start, self.window)?;
            let clip_inputs = input_idx
                .iter()
                .map(|&i| self.store.frame(&entry, i))
                .collect::<Result<Vec<_>>>()?;
            let target = self.store.frame(&entry, target_idx)?;
            let mut attempt = 0;
            let anomaly = loop {
                let donor = self.draw_donor(&clip_inputs, rng)?;
                let mask = self.mask_for(&donor)?;
                let paste_box = sample_paste_box(target.height(), target.width(), rng)?;
                let a = paste(&target, &donor, &mask, paste_box)?;
                attempt += 1;
                if !a.empty_paste || attempt >= MAX_RETRIES {
                    break a;
                }
            };
            if anomaly.empty_paste {
                empty_pastes += 1;
            }
            masks.push(mask_to_resolution(&anomaly.mask, feature_hw.0, feature_hw.1));
            pseudo.push(anomaly.frame.pixels);
            provenance.push(anomaly.provenance);
            inputs.push(clip_inputs.into_iter().map(|f| f.pixels).collect::<Vec<_>>());
            targets.push(target.pixels);
        }
        let input_refs: Vec<Vec<&Array3<f32>>> = inputs.iter().map(|c| c.iter().collect()).collect();
        let mask_stack = ndarray::stack(Axis(0), &masks.iter().map(|m| m.view()).collect::<Vec<_>>())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (b, h, w) = mask_stack.dim();
        Ok(Batch {
            inputs: inputs_to_tensor(&input_refs, dtype, device)?,
            targets: frames_to_tensor(&targets.iter().collect::<Vec<_>>(), dtype, device)?,
            pseudo: frames_to_tensor(&pseudo.iter().collect::<Vec<_>>(), dtype, device)?,
            masks_small: Tensor::from_vec(mask_stack.into_raw_vec_and_offset().0, (b, h, w), device)?
                .to_dtype(dtype)?,
            provenance,
            empty_pastes,
        })
    }
}

//! Inference-time scoring: PSNR per predicted frame, per-video normalization,
//! frame-level ROC-AUC and efficiency metrics.

use std::time::Instant;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{clip_count, DatasetManifest, FrameStore};
use crate::networks::{inputs_to_tensor, Generator, GeneratorConfig};

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

/// PSNR in dB of an MSE measured on `[0, 1]` images (peak 1).
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR of two images with values in `[0, 1]`.
pub fn psnr(pred: &[f32], target: &[f32]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!("psnr over {} vs {} values", pred.len(), target.len())));
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    Ok(psnr_from_mse(mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreOrientation {
    /// `1 − normalized PSNR`: larger means more anomalous.
    #[default]
    Anomaly,
    /// Normalized PSNR itself (a regularity score).
    Regularity,
}

/// Min-max normalize one video's PSNR series and orient it.
///
/// A constant series (including a single frame) scores all zeros.
pub fn normalize_and_score(psnr: &[f64], orientation: ScoreOrientation) -> Result<Vec<f64>> {
    if psnr.is_empty() {
        return Err(Error::EmptyBatch("PSNR series is empty".into()));
    }
    let min = psnr.iter().copied().fold(f64::INFINITY, f64::min);
    let max = psnr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Ok(vec![0.0; psnr.len()]);
    }
    Ok(psnr
        .iter()
        .map(|p| {
            let s = (p - min) / range;
            match orientation {
                ScoreOrientation::Anomaly => 1.0 - s,
                ScoreOrientation::Regularity => s,
            }
        })
        .collect())
}

/// Area under the ROC curve, `P(score⁺ > score⁻) + ½·P(tie)`, via mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {bad} in AUC input")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!("{n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid_rank * positives as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScoreSeries {
    pub video_id: String,
    /// Index of the first scored frame (the first `T` frames have no prediction).
    pub first_frame: usize,
    pub psnr: Vec<f64>,
    pub anomaly: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl AnomalyScoreSeries {
    pub fn from_psnr(
        video_id: &str,
        first_frame: usize,
        psnr: Vec<f64>,
        all_labels: Option<&[u8]>,
        orientation: ScoreOrientation,
    ) -> Result<Self> {
        let anomaly = normalize_and_score(&psnr, orientation)?;
        let labels = all_labels.map(|l| l[first_frame..first_frame + psnr.len()].to_vec());
        Ok(Self {
            video_id: video_id.to_string(),
            first_frame,
            psnr,
            anomaly,
            labels,
        })
    }

    pub fn auc(&self) -> Option<f64> {
        self.labels.as_ref().and_then(|l| roc_auc(&self.anomaly, l).ok())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,psnr,anomaly_score,label\n");
        for (k, (p, a)) in self.psnr.iter().zip(&self.anomaly).enumerate() {
            let label = self
                .labels
                .as_ref()
                .map(|l| l[k].to_string())
                .unwrap_or_default();
            out.push_str(&format!("{},{p:.6},{a:.6},{label}\n", self.first_frame + k));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetScores {
    pub videos: Vec<AnomalyScoreSeries>,
    /// AUC over all scored frames pooled across videos.
    pub pooled_auc: Option<f64>,
    pub per_video_auc: Vec<(String, Option<f64>)>,
    /// Mean of the defined per-video AUCs.
    pub mean_video_auc: Option<f64>,
}

impl DatasetScores {
    pub fn from_series(videos: Vec<AnomalyScoreSeries>) -> Self {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for v in &videos {
            if let Some(l) = &v.labels {
                scores.extend_from_slice(&v.anomaly);
                labels.extend_from_slice(l);
            }
        }
        let pooled_auc = roc_auc(&scores, &labels).ok();
        let per_video_auc: Vec<_> = videos.iter().map(|v| (v.video_id.clone(), v.auc())).collect();
        let defined: Vec<f64> = per_video_auc.iter().filter_map(|(_, a)| *a).collect();
        let mean_video_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Self {
            videos,
            pooled_auc,
            per_video_auc,
            mean_video_auc,
        }
    }
}

impl DatasetScores {
    /// `<video_id>.csv` per video and `summary.json` under `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for v in &self.videos {
            let path = dir.join(format!("{}.csv", v.video_id));
            std::fs::write(&path, v.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        let summary = serde_json::json!({
            "pooled_auc": self.pooled_auc,
            "mean_video_auc": self.mean_video_auc,
            "per_video_auc": self.per_video_auc,
        });
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub batch_size: usize,
    pub orientation: ScoreOrientation,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            orientation: ScoreOrientation::Anomaly,
        }
    }
}

/// Per-sample MSE between predicted and true frames, both in `[-1, 1]`,
/// measured after remapping to `[0, 1]`.
pub fn batch_mse_unit_range(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    let b = pred.dims()[0];
    let diff = ((pred - target)? * 0.5)?;
    Ok(diff
        .sqr()?
        .reshape((b, ()))?
        .mean(1)?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?)
}

/// Slide the generator over every video (stride 1) and score each predicted frame.
pub fn score_dataset(
    generator: &Generator,
    manifest: &DatasetManifest,
    store: &FrameStore,
    options: &ScoreOptions,
) -> Result<DatasetScores> {
    let t = generator.config.frames;
    let dtype = generator.memory.items.dtype();
    let device = generator.memory.items.device().clone();
    let mut series = Vec::new();
    for video in &manifest.videos {
        let windows = clip_count(video.frame_count, t);
        if windows == 0 {
            log::warn!(
                "skipping video {}: {} frames, need at least {}",
                video.video_id,
                video.frame_count,
                t + 1
            );
            continue;
        }
        let mut psnrs = Vec::with_capacity(windows);
        let mut start = 0;
        while start < windows {
            let end = (start + options.batch_size.max(1)).min(windows);
            let frames = (start..end + t)
                .map(|i| store.pixels(video, i))
                .collect::<Result<Vec<_>>>()?;
            let inputs: Vec<Vec<_>> = (0..end - start)
                .map(|k| frames[k..k + t].iter().map(|f| f.as_ref()).collect())
                .collect();
            let targets: Vec<_> = (0..end - start).map(|k| frames[k + t].as_ref()).collect();
            let x = inputs_to_tensor(&inputs, dtype, &device)?;
            let y = crate::networks::frames_to_tensor(&targets, dtype, &device)?;
            let pred = generator.forward(&x)?.frame.detach();
            psnrs.extend(batch_mse_unit_range(&pred, &y)?.into_iter().map(psnr_from_mse));
            start = end;
        }
        series.push(AnomalyScoreSeries::from_psnr(
            &video.video_id,
            t,
            psnrs,
            video.labels.as_deref(),
            options.orientation,
        )?);
    }
    Ok(DatasetScores::from_series(series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Trainable parameters of the inference path, in millions.
    pub parameters_m: f64,
    pub parameters: usize,
    /// Analytic multiply-accumulates of one forward pass, in billions.
    pub gmacs: f64,
    pub fps: f64,
    pub input_shape: [usize; 3],
}

/// Count parameters and MACs analytically and time `passes` forward passes.
pub fn efficiency_report(
    generator: &Generator,
    channels: usize,
    height: usize,
    width: usize,
    warmup: usize,
    passes: usize,
) -> Result<EfficiencyReport> {
    let cfg: &GeneratorConfig = &generator.config;
    let dtype = generator.memory.items.dtype();
    let device = generator.memory.items.device().clone();
    let x = Tensor::zeros((1, cfg.frames * channels, height, width), dtype, &device)?;
    for _ in 0..warmup {
        generator.forward(&x)?;
    }
    let start = Instant::now();
    for _ in 0..passes.max(1) {
        generator.forward(&x)?;
    }
    let fps = passes.max(1) as f64 / start.elapsed().as_secs_f64();
    let parameters = cfg.num_params();
    Ok(EfficiencyReport {
        parameters_m: parameters as f64 / 1e6,
        parameters,
        gmacs: cfg.macs(height, width) as f64 / 1e9,
        fps,
        input_shape: [channels, height, width],
    })
}

//! Flat key-value training configuration.
//!
//! Config files are TOML documents with only top-level `key = value` pairs.
//! Every key is optional; absent keys take the defaults below. Unknown keys,
//! type mismatches and out-of-range values are all collected and reported
//! together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{Addressing, CriticConfig, GeneratorConfig};
use crate::scoring::ScoreOrientation;
use crate::synthesis::ExtractorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Vad,
    Ti,
    /// TI when a TI root is configured, VAD otherwise (donors only).
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub output_dir: PathBuf,
    pub train_root: Option<PathBuf>,
    pub ti_root: Option<PathBuf>,
    pub generator_source: DataSource,
    pub donor_source: DataSource,
    pub image_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_classifier: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub frame_cache: usize,
    pub mask_threshold: f64,
    pub classifier_sigmoid: bool,
    pub score_orientation: ScoreOrientation,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub extractor: ExtractorConfig,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: true,
            output_dir: PathBuf::from("runs/default"),
            train_root: None,
            ti_root: None,
            generator_source: DataSource::Vad,
            donor_source: DataSource::Auto,
            image_size: 256,
            lr_generator: 0.0002,
            lr_discriminator: 0.00002,
            lr_classifier: 0.00002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            iterations: 5000,
            checkpoint_every: 500,
            frame_cache: 20_000,
            mask_threshold: 0.1,
            classifier_sigmoid: false,
            score_orientation: ScoreOrientation::Anomaly,
            generator: GeneratorConfig::reference(),
            critic: CriticConfig::reference(),
            extractor: ExtractorConfig::default(),
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
        }
    }
}

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {}", other.type_str())),
    }
}

fn as_int(v: &Value) -> std::result::Result<i64, String> {
    match v {
        Value::Integer(i) => Ok(*i),
        other => Err(format!("expected an integer, got {}", other.type_str())),
    }
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    let i = as_int(v)?;
    usize::try_from(i).map_err(|_| format!("must be ≥ 0, got {i}"))
}

fn as_bool(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected a boolean, got {}", v.type_str()))
}

fn as_str(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected a string, got {}", v.type_str()))
}

fn as_source(v: &Value) -> std::result::Result<DataSource, String> {
    match as_str(v)? {
        "vad" => Ok(DataSource::Vad),
        "ti" => Ok(DataSource::Ti),
        "auto" => Ok(DataSource::Auto),
        s => Err(format!("expected one of vad, ti, auto; got `{s}`")),
    }
}

fn source_name(s: DataSource) -> &'static str {
    match s {
        DataSource::Vad => "vad",
        DataSource::Ti => "ti",
        DataSource::Auto => "auto",
    }
}

impl TrainConfig {
    fn apply(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = u64::try_from(as_int(v)?).map_err(|_| "must be ≥ 0".to_string())?,
            "deterministic" => self.deterministic = as_bool(v)?,
            "output_dir" => self.output_dir = PathBuf::from(as_str(v)?),
            "train_root" => self.train_root = Some(PathBuf::from(as_str(v)?)),
            "ti_root" => self.ti_root = Some(PathBuf::from(as_str(v)?)),
            "generator_source" => self.generator_source = as_source(v)?,
            "donor_source" => self.donor_source = as_source(v)?,
            "image_size" => self.image_size = as_usize(v)?,
            "frames" => self.generator.frames = as_usize(v)?,
            "lr_G" => self.lr_generator = as_f64(v)?,
            "lr_D" => self.lr_discriminator = as_f64(v)?,
            "lr_N" => self.lr_classifier = as_f64(v)?,
            "adam_beta1" => self.adam_beta1 = as_f64(v)?,
            "adam_beta2" => self.adam_beta2 = as_f64(v)?,
            "adam_eps" => self.adam_eps = as_f64(v)?,
            "batch_size" => self.batch_size = as_usize(v)?,
            "iterations" => self.iterations = as_usize(v)?,
            "checkpoint_every" => self.checkpoint_every = as_usize(v)?,
            "frame_cache" => self.frame_cache = as_usize(v)?,
            "mask_threshold" => self.mask_threshold = as_f64(v)?,
            "classifier_sigmoid" => self.classifier_sigmoid = as_bool(v)?,
            "score_orientation" => {
                self.score_orientation = match as_str(v)? {
                    "anomaly" => ScoreOrientation::Anomaly,
                    "regularity" => ScoreOrientation::Regularity,
                    s => return Err(format!("expected anomaly or regularity, got `{s}`")),
                }
            }
            "gen_widths" => {
                let arr = v.as_array().ok_or_else(|| format!("expected an array, got {}", v.type_str()))?;
                self.generator.widths = arr.iter().map(as_usize).collect::<std::result::Result<_, _>>()?;
            }
            "gen_convs_per_stage" => self.generator.convs_per_stage = as_usize(v)?,
            "memory_slots" => self.generator.memory_slots = as_usize(v)?,
            "memory_shrink" => self.generator.shrink = as_f64(v)?,
            "memory_addressing" => {
                self.generator.addressing = match as_str(v)? {
                    "per-location" => Addressing::PerLocation,
                    "global" => Addressing::Global,
                    s => return Err(format!("expected per-location or global, got `{s}`")),
                }
            }
            "critic_width" => self.critic.base_width = as_usize(v)?,
            "critic_stages" => self.critic.stages = as_usize(v)?,
            "extractor_depth" => self.extractor.depth = as_usize(v)?,
            "extractor_stages" => self.extractor.stages = as_usize(v)?,
            "extractor_seed" => {
                self.extractor.seed = u64::try_from(as_int(v)?).map_err(|_| "must be ≥ 0".to_string())?
            }
            "alpha_MEM" => self.weights.memory = as_f64(v)?,
            "alpha_D" => self.weights.adversarial = as_f64(v)?,
            "alpha_N" => self.weights.normalcy_gen = as_f64(v)?,
            "alpha_n" => self.weights.normalcy = as_f64(v)?,
            "alpha_rn" => self.weights.relative_normalcy = as_f64(v)?,
            "alpha_aa" => self.weights.attention = as_f64(v)?,
            "alpha_raa" => self.weights.relative_attention = as_f64(v)?,
            "arc_scale" => self.weights.arc_scale = as_f64(v)?,
            "arc_margin_deg" => self.weights.arc_margin = as_f64(v)?.to_radians(),
            "aug_brightness" => self.augment.brightness = as_f64(v)?,
            "aug_contrast" => self.augment.contrast = as_f64(v)?,
            "aug_saturation" => self.augment.saturation = as_f64(v)?,
            "aug_hue" => self.augment.hue = as_f64(v)?,
            "aug_degrees" => self.augment.degrees = as_f64(v)?,
            "aug_distortion" => self.augment.distortion = as_f64(v)?,
            "aug_probability" => self.augment.probability = as_f64(v)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    fn range_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("lr_G", self.lr_generator),
            ("lr_D", self.lr_discriminator),
            ("lr_N", self.lr_classifier),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{name}: must be ≥ 0, got {v}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            errs.push(format!("adam_eps: must be > 0, got {}", self.adam_eps));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("{name}: must be in [0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("iterations", self.iterations),
            ("checkpoint_every", self.checkpoint_every),
            ("frames", self.generator.frames),
            ("gen_convs_per_stage", self.generator.convs_per_stage),
            ("memory_slots", self.generator.memory_slots),
            ("critic_width", self.critic.base_width),
            ("critic_stages", self.critic.stages),
            ("frame_cache", self.frame_cache),
        ] {
            if v == 0 {
                errs.push(format!("{name}: must be ≥ 1"));
            }
        }
        if self.generator.widths.is_empty() || self.generator.widths.contains(&0) {
            errs.push("gen_widths: needs at least one positive width".into());
        } else if self.image_size % self.generator.downsampling() != 0 || self.image_size == 0 {
            errs.push(format!(
                "image_size: {} is not divisible by {} (2^(stages-1))",
                self.image_size,
                self.generator.downsampling()
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            errs.push(format!("mask_threshold: must be in [0, 1], got {}", self.mask_threshold));
        }
        if self.generator.shrink < 0.0 {
            errs.push("memory_shrink: must be ≥ 0".into());
        }
        if ![18, 34, 50, 101, 152].contains(&self.extractor.depth) {
            errs.push(format!("extractor_depth: unsupported depth {}", self.extractor.depth));
        }
        if !(1..=4).contains(&self.extractor.stages) {
            errs.push(format!("extractor_stages: must be 1..=4, got {}", self.extractor.stages));
        }
        if let Err(e) = self.weights.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.augment.validate() {
            errs.push(e.to_string());
        }
        if self.generator_source == DataSource::Auto {
            errs.push("generator_source: must be vad or ti".into());
        }
        errs
    }

    /// Parse a flat TOML document, filling defaults for absent keys.
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, Vec<String>> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| vec![format!("parse error: {e}")])?;
        let mut cfg = TrainConfig::default();
        let mut errs = Vec::new();
        for (key, value) in &table {
            if value.is_table() {
                errs.push(format!("{key}: nested tables are not allowed"));
                continue;
            }
            if let Err(e) = cfg.apply(key, value) {
                errs.push(format!("{key}: {e}"));
            }
        }
        errs.extend(cfg.range_errors());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(errs)
        }
    }

    /// Range checks for configs built in code rather than parsed.
    pub fn validate(&self) -> Result<()> {
        let errs = self.range_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        let mut put = |k: &str, v: Value| {
            t.insert(k.to_string(), v);
        };
        let int = |v: usize| Value::Integer(v as i64);
        put("seed", Value::Integer(self.seed as i64));
        put("deterministic", Value::Boolean(self.deterministic));
        put("output_dir", Value::String(self.output_dir.display().to_string()));
        if let Some(p) = &self.train_root {
            put("train_root", Value::String(p.display().to_string()));
        }
        if let Some(p) = &self.ti_root {
            put("ti_root", Value::String(p.display().to_string()));
        }
        put("generator_source", Value::String(source_name(self.generator_source).into()));
        put("donor_source", Value::String(source_name(self.donor_source).into()));
        put("image_size", int(self.image_size));
        put("frames", int(self.generator.frames));
        put("lr_G", Value::Float(self.lr_generator));
        put("lr_D", Value::Float(self.lr_discriminator));
        put("lr_N", Value::Float(self.lr_classifier));
        put("adam_beta1", Value::Float(self.adam_beta1));
        put("adam_beta2", Value::Float(self.adam_beta2));
        put("adam_eps", Value::Float(self.adam_eps));
        put("batch_size", int(self.batch_size));
        put("iterations", int(self.iterations));
        put("checkpoint_every", int(self.checkpoint_every));
        put("frame_cache", int(self.frame_cache));
        put("mask_threshold", Value::Float(self.mask_threshold));
        put("classifier_sigmoid", Value::Boolean(self.classifier_sigmoid));
        put(
            "score_orientation",
            Value::String(
                match self.score_orientation {
                    ScoreOrientation::Anomaly => "anomaly",
                    ScoreOrientation::Regularity => "regularity",
                }
                .into(),
            ),
        );
        put("gen_widths", Value::Array(self.generator.widths.iter().map(|&w| int(w)).collect()));
        put("gen_convs_per_stage", int(self.generator.convs_per_stage));
        put("memory_slots", int(self.generator.memory_slots));
        put("memory_shrink", Value::Float(self.generator.shrink));
        put(
            "memory_addressing",
            Value::String(
                match self.generator.addressing {
                    Addressing::PerLocation => "per-location",
                    Addressing::Global => "global",
                }
                .into(),
            ),
        );
        put("critic_width", int(self.critic.base_width));
        put("critic_stages", int(self.critic.stages));
        put("extractor_depth", int(self.extractor.depth));
        put("extractor_stages", int(self.extractor.stages));
        put("extractor_seed", Value::Integer(self.extractor.seed as i64));
        put("alpha_MEM", Value::Float(self.weights.memory));
        put("alpha_D", Value::Float(self.weights.adversarial));
        put("alpha_N", Value::Float(self.weights.normalcy_gen));
        put("alpha_n", Value::Float(self.weights.normalcy));
        put("alpha_rn", Value::Float(self.weights.relative_normalcy));
        put("alpha_aa", Value::Float(self.weights.attention));
        put("alpha_raa", Value::Float(self.weights.relative_attention));
        put("arc_scale", Value::Float(self.weights.arc_scale));
        put("arc_margin_deg", Value::Float(self.weights.arc_margin.to_degrees()));
        put("aug_brightness", Value::Float(self.augment.brightness));
        put("aug_contrast", Value::Float(self.augment.contrast));
        put("aug_saturation", Value::Float(self.augment.saturation));
        put("aug_hue", Value::Float(self.augment.hue));
        put("aug_degrees", Value::Float(self.augment.degrees));
        put("aug_distortion", Value::Float(self.augment.distortion));
        put("aug_probability", Value::Float(self.augment.probability));
        t
    }

    /// Resolved configuration as a flat TOML document (keys sorted).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_table()).expect("flat table serializes")
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: crate::ingest::CHANNELS,
            ..self.generator.clone()
        }
    }
}

/// Read and validate a config file; all problems are reported together.
pub fn validate_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    TrainConfig::from_toml_str(&text).map_err(|errs| Error::Config(errs.join("; ")))
}

//! Adversarial training of the generator, discriminator and normalcy
//! classifier.

mod adam;
mod checkpoint;
mod data;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
pub use data::{load_dataset, Batch, TrainingData};

use crate::augment::augment;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{
    classifier_objective, generator_objective, loss_adversarial, loss_attention_affirmation, loss_gradient,
    loss_memory_entropy, loss_mse, loss_normalcy, loss_normalcy_generator, loss_relative_attention,
    loss_relative_normalcy, loss_ssim, ClassifierTerms, GeneratorTerms, LossValue,
};
use crate::networks::params::Init;
use crate::networks::{frames_to_tensor, tensor_to_frames, Generator, ParamStore, PatchCritic};
use crate::synthesis::{scda_attention, FrozenFeatureExtractor};

const CHECKPOINT_FORMAT: u32 = 1;
const STREAM_GENERATOR: u64 = 1;
const STREAM_DISCRIMINATOR: u64 = 2;
const STREAM_CLASSIFIER: u64 = 3;
const STREAM_ITERATION: u64 = 1 << 32;

/// Seeded stream for iteration `i`; resuming needs no saved RNG state.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_ITERATION + iteration);
    rng
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The three trained networks and the class centres of the margin loss.
pub struct Models {
    pub generator: Generator,
    pub generator_params: ParamStore,
    pub discriminator: PatchCritic,
    pub discriminator_params: ParamStore,
    pub classifier: PatchCritic,
    /// Classifier weights plus `arcface.centers` (`2×h·w`).
    pub classifier_params: ParamStore,
    pub centers: Tensor,
}

impl Models {
    pub fn new(cfg: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut generator_params = ParamStore::new();
        let mut rng = init_rng(cfg.seed, STREAM_GENERATOR);
        let generator = Generator::new(
            cfg.generator_config(),
            &mut generator_params,
            &mut Init {
                rng: &mut rng,
                dtype,
                device,
            },
        )?;
        let mut discriminator_params = ParamStore::new();
        let mut rng = init_rng(cfg.seed, STREAM_DISCRIMINATOR);
        let discriminator = PatchCritic::new(
            cfg.critic.clone(),
            &mut discriminator_params,
            &mut Init {
                rng: &mut rng,
                dtype,
                device,
            },
        )?;
        let mut classifier_params = ParamStore::new();
        let mut rng = init_rng(cfg.seed, STREAM_CLASSIFIER);
        let mut init = Init {
            rng: &mut rng,
            dtype,
            device,
        };
        let classifier = PatchCritic::new(cfg.critic.clone(), &mut classifier_params, &mut init)?;
        let (fh, fw) = cfg.critic.feature_size(cfg.image_size, cfg.image_size);
        let d = fh * fw;
        let bound = (6.0 / (2 + d) as f64).sqrt();
        let centers = classifier_params.insert("arcface.centers", init.uniform(&[2, d], bound)?)?;
        Ok(Self {
            generator,
            generator_params,
            discriminator,
            discriminator_params,
            classifier,
            classifier_params,
            centers,
        })
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.extend(self.generator_params.tensors("G."));
        out.extend(self.discriminator_params.tensors("D."));
        out.extend(self.classifier_params.tensors("N."));
        out
    }

    pub fn load(&self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        self.generator_params.load(tensors, "G.")?;
        self.discriminator_params.load(tensors, "D.")?;
        self.classifier_params.load(tensors, "N.")
    }
}

/// Scalar losses of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    pub mse: f64,
    pub ssim: f64,
    pub gradient: f64,
    pub memory: f64,
    pub normalcy: f64,
    pub relative_normalcy: f64,
    pub attention: f64,
    pub relative_attention: f64,
    pub generator: f64,
    pub discriminator: f64,
    pub classifier: f64,
    pub memory_fallbacks: usize,
    pub empty_pastes: usize,
}

pub const LOG_HEADER: &str = "iteration,L_MSE,L_SSM,L_GD,L_MEM,L_N,L_RN,L_AA,L_RAA,L_G,L_D,L_N_total";

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mse,
            self.ssim,
            self.gradient,
            self.memory,
            self.normalcy,
            self.relative_normalcy,
            self.attention,
            self.relative_attention,
            self.generator,
            self.discriminator,
            self.classifier
        )
    }
}

/// Keys that may change between a checkpoint and the run resuming it.
const RESUMABLE_KEYS: [&str; 6] = [
    "iterations",
    "output_dir",
    "checkpoint_every",
    "frame_cache",
    "train_root",
    "ti_root",
];

pub struct Trainer {
    pub config: TrainConfig,
    pub models: Models,
    pub data: TrainingData,
    opt_g: Adam,
    opt_d: Adam,
    opt_n: Adam,
    /// Completed iterations.
    pub iteration: u64,
    dtype: DType,
    device: Device,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dtype = DType::F32;
        let device = Device::Cpu;
        let models = Models::new(&config, dtype, &device)?;
        let extractor = FrozenFeatureExtractor::new(config.extractor.clone(), dtype, &device)?;
        let data = TrainingData::new(&config, extractor)?;
        let adam = |store: &ParamStore, lr: f64| Adam::new(store, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
        let opt_g = adam(&models.generator_params, config.lr_generator)?;
        let opt_d = adam(&models.discriminator_params, config.lr_discriminator)?;
        let opt_n = adam(&models.classifier_params, config.lr_classifier)?;
        Ok(Self {
            config,
            models,
            data,
            opt_g,
            opt_d,
            opt_n,
            iteration: 0,
            dtype,
            device,
        })
    }

    /// Restore weights, optimizer moments and the iteration counter.
    ///
    /// `config` may differ from the checkpointed one only in run-length and
    /// path keys.
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        let mut saved = ckpt.config.to_table();
        let mut wanted = config.to_table();
        for k in RESUMABLE_KEYS {
            saved.remove(k);
            wanted.remove(k);
        }
        let mut differing: Vec<&String> = saved
            .iter()
            .filter(|(k, v)| wanted.get(*k) != Some(v))
            .map(|(k, _)| k)
            .chain(wanted.keys().filter(|k| !saved.contains_key(*k)))
            .collect();
        differing.sort();
        differing.dedup();
        if !differing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "config differs from checkpoint in {differing:?}"
            )));
        }
        let mut trainer = Self::new(config)?;
        trainer.models.load(&ckpt.tensors)?;
        let it = ckpt.meta.iteration;
        trainer.opt_g.load(&ckpt.tensors, "opt.G.", it)?;
        trainer.opt_d.load(&ckpt.tensors, "opt.D.", it)?;
        trainer.opt_n.load(&ckpt.tensors, "opt.N.", it)?;
        trainer.iteration = it;
        Ok(trainer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.models.tensors();
        tensors.extend(self.opt_g.tensors("opt.G."));
        tensors.extend(self.opt_d.tensors("opt.D."));
        tensors.extend(self.opt_n.tensors("opt.N."));
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT,
            iteration: self.iteration,
            seed: self.config.seed,
            config_hash: self.config.hash(),
            config: self.config.to_toml_string(),
        };
        write_checkpoint(path, &meta, tensors)
    }

    fn normalcy(&self, logits_mean: Tensor) -> Result<Tensor> {
        if self.config.classifier_sigmoid {
            Ok(logits_mean.neg()?.exp()?.affine(1.0, 1.0)?.recip()?)
        } else {
            Ok(logits_mean)
        }
    }

    /// One iteration: discriminator, then classifier, then generator.
    pub fn step(&mut self) -> Result<LossReport> {
        let cfg = &self.config;
        let mut rng = iteration_rng(cfg.seed, self.iteration);
        let feature_hw = cfg.critic.feature_size(cfg.image_size, cfg.image_size);
        let batch = self
            .data
            .sample(cfg.batch_size, feature_hw, &mut rng, self.dtype, &self.device)?;
        let b = cfg.batch_size;
        let m = &self.models;


        let gen_out = m.generator.forward(&batch.inputs)?;
        let v_hat = gen_out.frame.clone();
        let v_hat_d = v_hat.detach();

        // discriminator
        let d_scores = m
            .discriminator
            .score(&Tensor::cat(&[&v_hat_d, &batch.targets], 0)?)?;
        let adv_d = loss_adversarial(&d_scores.narrow(0, 0, b)?, &d_scores.narrow(0, b, b)?)?;
        crate::losses::check_finite(&[("L_D", &adv_d.discriminator)])?;
        let loss_d = adv_d.discriminator.value()?;
        let grads = adv_d.discriminator.backward()?;
        self.opt_d.step(&m.discriminator_params, &grads)?;

        // classifier
        let augmented: Vec<_> = tensor_to_frames(&v_hat_d)?
            .iter()
            .map(|f| augment(f, &cfg.augment, &mut rng))
            .collect();
        let aug = frames_to_tensor(&augmented.iter().collect::<Vec<_>>(), self.dtype, &self.device)?;
        let n_out = m
            .classifier
            .forward(&Tensor::cat(&[&v_hat_d, &batch.pseudo, &aug], 0)?)?;
        let n_scores = self.normalcy(n_out.scores()?)?;
        let n_hat = n_scores.narrow(0, 0, b)?;
        let n_tilde = n_scores.narrow(0, b, b)?;
        let attn = scda_attention(&n_out.features)?;
        let attn_hat = attn.narrow(0, 0, b)?;
        let attn_tilde = attn.narrow(0, b, b)?;
        let attn_aug = attn.narrow(0, 2 * b, b)?;
        let flat = Tensor::cat(&[&attn_hat, &attn_aug, &attn_tilde], 0)?.flatten_from(1)?;
        let labels: Vec<u8> = std::iter::repeat_n(1u8, 2 * b).chain(std::iter::repeat_n(0u8, b)).collect();
        let cls_terms = ClassifierTerms {
            normalcy: loss_normalcy(&n_hat, &n_tilde)?,
            relative_normalcy: loss_relative_normalcy(&n_hat, &n_tilde)?,
            attention: loss_attention_affirmation(&attn_hat, &attn_tilde, &batch.masks_small)?,
            relative_attention: loss_relative_attention(
                &flat,
                &labels,
                &m.centers,
                cfg.weights.arc_scale,
                cfg.weights.arc_margin,
            )?,
        };
        let loss_n = classifier_objective(&cls_terms, &cfg.weights)?;
        let grads = loss_n.backward()?;
        self.opt_n.step(&m.classifier_params, &grads)?;

        // generator, against the updated critics
        let adv_g = loss_adversarial(&m.discriminator.score(&v_hat)?, &d_scores.narrow(0, b, b)?.detach())?;
        let n_gen = self.normalcy(m.classifier.score(&v_hat)?)?;
        let gen_terms = GeneratorTerms {
            mse: loss_mse(&v_hat, &batch.targets)?,
            ssim: loss_ssim(&v_hat, &batch.targets)?,
            gradient: loss_gradient(&v_hat, &batch.targets)?,
            memory: loss_memory_entropy(&gen_out.weights)?,
            adversarial_gen: adv_g.generator,
            normalcy_gen: loss_normalcy_generator(&n_gen)?,
        };
        let loss_g = generator_objective(&gen_terms, &cfg.weights)?;
        let grads = loss_g.backward()?;
        self.opt_g.step(&m.generator_params, &grads)?;

        self.iteration += 1;
        Ok(LossReport {
            iteration: self.iteration,
            mse: gen_terms.mse.value()?,
            ssim: gen_terms.ssim.value()?,
            gradient: gen_terms.gradient.value()?,
            memory: gen_terms.memory.value()?,
            normalcy: cls_terms.normalcy.value()?,
            relative_normalcy: cls_terms.relative_normalcy.value()?,
            attention: cls_terms.attention.value()?,
            relative_attention: cls_terms.relative_attention.value()?,
            generator: loss_g.value()?,
            discriminator: loss_d,
            classifier: loss_n.value()?,
            memory_fallbacks: gen_out.fallbacks,
            empty_pastes: batch.empty_pastes,
        })
    }

    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.config
            .output_dir
            .join(format!("checkpoint_{iteration:06}.safetensors"))
    }

    /// Train until `config.iterations`, logging every iteration and
    /// checkpointing on the configured cadence and at the end.
    pub fn run(&mut self, mut observe: impl FnMut(&LossReport)) -> Result<RunSummary> {
        let out = self.config.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
        let resolved = out.join("config.resolved.toml");
        std::fs::write(&resolved, self.config.to_toml_string())
            .map_err(|e| Error::io(format!("writing {}", resolved.display()), e))?;
        let log_path = out.join("train_log.csv");
        let fresh = self.iteration == 0 || !log_path.exists();
        let mut log = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&log_path)
            .map_err(|e| Error::io(format!("opening {}", log_path.display()), e))?;
        if fresh {
            writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io("writing log", e))?;
        }
        let total = self.config.iterations as u64;
        let every = self.config.checkpoint_every as u64;
        let mut checkpoints = Vec::new();
        let mut last = None;
        while self.iteration < total {
            let report = self.step()?;
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io("writing log", e))?;
            log.flush().map_err(|e| Error::io("flushing log", e))?;
            if report.memory_fallbacks > 0 {
                log::debug!("iteration {}: {} memory fallbacks", report.iteration, report.memory_fallbacks);
            }
            observe(&report);
            if self.iteration % every == 0 || self.iteration == total {
                let path = self.checkpoint_path(self.iteration);
                self.save(&path)?;
                checkpoints.push(path);
            }
            last = Some(report);
        }
        Ok(RunSummary {
            checkpoints,
            log: log_path,
            last,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub last: Option<LossReport>,
}

/// Rebuild the generator from a checkpoint for inference.
pub fn load_generator(path: &Path) -> Result<(Generator, TrainConfig)> {
    let ckpt = read_checkpoint(path)?;
    let models = Models::new(&ckpt.config, DType::F32, &Device::Cpu)?;
    models.generator_params.load(&ckpt.tensors, "G.")?;
    Ok((models.generator, ckpt.config))
}

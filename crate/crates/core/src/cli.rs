//! Command-line entry points.

use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{validate_config, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::{build_manifest, load_and_resize, normalize_frame, save_png, DatasetKind, FrameStore, CHANNELS};
use crate::relevancy::{mean_abs_cos_sim, EmbeddingProvider, LabelSet, TableProvider};
use crate::scoring::{efficiency_report, score_dataset, ScoreOptions};
use crate::synthesis::{synthesize, ExtractorConfig, FrozenFeatureExtractor, DEFAULT_THRESHOLD};
use crate::toybench::{generate_toy_dataset, ToySpec};
use crate::training::{load_dataset, load_generator, Models, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Relative output paths are resolved under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "VADKIT_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "vadkit", version, about = "Video anomaly detection by future-frame prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Build frame directories and manifests.
    Preprocess(PreprocessArgs),
    /// Train from a config file.
    Train(TrainArgs),
    /// Score a test set with a trained generator.
    Eval(EvalArgs),
    /// Paste one donor frame's foreground onto a base frame.
    Synth(SynthArgs),
    /// Mean absolute cosine similarity between two label sets.
    Relevancy(RelevancyArgs),
    /// Parameter count, MACs and throughput of the generator.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Generate the synthetic benchmark from a flat TOML spec ("-" for defaults).
    #[arg(long, conflicts_with_all = ["video", "frames"])]
    pub toy: Option<String>,
    /// Decode a video file into numbered frames with ffmpeg.
    #[arg(long, conflicts_with = "frames")]
    pub video: Option<PathBuf>,
    /// Scan an existing frame-directory root and write its manifest.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Dataset kind for --frames: vad-train, vad-test or ti.
    #[arg(long, default_value = "vad-train")]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test manifest (`.json`) or frame-directory root with label files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub donor: PathBuf,
    /// Output PNG; the mask and provenance are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub extractor_depth: usize,
    #[arg(long, default_value_t = 4)]
    pub extractor_stages: usize,
}

#[derive(Args, Debug)]
pub struct RelevancyArgs {
    /// Label file of the first vocabulary, one label per line.
    #[arg(long)]
    pub p: PathBuf,
    #[arg(long)]
    pub q: PathBuf,
    /// Word vectors (`.bin` binary or text); the built-in toy table otherwise.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write the pairwise matrix as CSV.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long, conflicts_with = "config")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub passes: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
}

/// Resolve a relative output path under `$VADKIT_OUTPUT_ROOT` when set.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let out = output_path(&args.out);
    if let Some(spec_path) = args.toy {
        let spec = if spec_path == "-" {
            ToySpec::default()
        } else {
            let text = std::fs::read_to_string(&spec_path)
                .map_err(|e| Error::Config(format!("cannot read toy spec {spec_path}: {e}")))?;
            ToySpec::from_toml_str(&text)?
        };
        let ds = generate_toy_dataset(&spec, &out)?;
        println!(
            "toy dataset at {}: {} train, {} test, {} donor frames",
            out.display(),
            ds.train.total_frames(),
            ds.test.total_frames(),
            ds.ti.total_frames()
        );
        return Ok(());
    }
    if let Some(video) = args.video {
        std::fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
        let status = Command::new("ffmpeg")
            .args(["-hide_banner", "-loglevel", "error", "-i"])
            .arg(&video)
            .args(["-start_number", "0"])
            .arg(out.join("%06d.png"))
            .status()
            .map_err(|e| Error::io("running ffmpeg (is it installed?)", e))?;
        if !status.success() {
            return Err(Error::Decode {
                path: video,
                message: format!("ffmpeg exited with {status}"),
            });
        }
        println!("frames written to {}", out.display());
        return Ok(());
    }
    if let Some(root) = args.frames {
        let kind = match args.kind.as_str() {
            "vad-train" => DatasetKind::VadTrain,
            "vad-test" => DatasetKind::VadTest,
            "ti" => DatasetKind::Ti,
            k => return Err(Error::Config(format!("unknown dataset kind `{k}`"))),
        };
        let manifest = build_manifest(&root, kind)?;
        manifest.save(&out)?;
        println!("{} videos, {} frames → {}", manifest.videos.len(), manifest.total_frames(), out.display());
        return Ok(());
    }
    Err(Error::Config("preprocess needs one of --toy, --video, --frames".into()))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = validate_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(n) = args.iterations {
        if n == 0 {
            return Err(Error::Config("iterations: must be ≥ 1".into()));
        }
        cfg.iterations = n;
    }
    cfg.output_dir = output_path(&cfg.output_dir);
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(cfg, p)?,
        None => Trainer::new(cfg)?,
    };
    log::info!(
        "training {} clips from iteration {} to {}",
        trainer.data.num_clips(),
        trainer.iteration,
        trainer.config.iterations
    );
    let summary = trainer.run(|r| {
        if r.iteration % 50 == 0 || r.iteration == 1 {
            log::info!(
                "iter {} L_G={:.4} L_D={:.4} L_N={:.4} mse={:.5}",
                r.iteration,
                r.generator,
                r.discriminator,
                r.classifier,
                r.mse
            );
        }
    })?;
    println!("log: {}", summary.log.display());
    for c in &summary.checkpoints {
        println!("checkpoint: {}", c.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let (generator, cfg) = load_generator(&args.checkpoint)?;
    let manifest = load_dataset(&args.data, DatasetKind::VadTest)?;
    let store = FrameStore::new(cfg.image_size, cfg.frame_cache);
    let scores = score_dataset(
        &generator,
        &manifest,
        &store,
        &ScoreOptions {
            batch_size: args.batch_size.max(1),
            orientation: cfg.score_orientation,
        },
    )?;
    let out = output_path(&args.out);
    scores.write(&out)?;
    match scores.pooled_auc {
        Some(auc) => println!("pooled AUC: {auc:.4}"),
        None => println!("pooled AUC: undefined (labels missing or single-class)"),
    }
    if let Some(m) = scores.mean_video_auc {
        println!("mean per-video AUC: {m:.4}");
    }
    println!("scores written to {}", out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let extractor = FrozenFeatureExtractor::new(
        ExtractorConfig {
            depth: args.extractor_depth,
            stages: args.extractor_stages,
            seed: args.seed,
        },
        candle_core::DType::F32,
        &candle_core::Device::Cpu,
    )?;
    let base = normalize_frame(&load_and_resize(&args.base, args.size)?, &args.base.display().to_string(), 0)?;
    let donor = normalize_frame(&load_and_resize(&args.donor, args.size)?, &args.donor.display().to_string(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let result = synthesize(&base, &donor, &extractor, args.threshold, &mut rng)?;
    let out = output_path(&args.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    save_png(&result.frame.pixels, &out)?;
    let (h, w) = result.mask.dim();
    let mask_img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([result.mask[[y as usize, x as usize]] * 255])
    });
    let mask_path = out.with_extension("mask.png");
    mask_img.save(&mask_path).map_err(|e| Error::Decode {
        path: mask_path.clone(),
        message: e.to_string(),
    })?;
    write_text(
        &out.with_extension("json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "provenance": result.provenance,
            "empty_paste": result.empty_paste,
            "pasted_pixels": result.mask.iter().filter(|&&m| m == 1).count(),
        }))?,
    )?;
    println!("pseudo anomaly written to {}", out.display());
    Ok(())
}

fn relevancy(args: RelevancyArgs) -> Result<()> {
    let provider = match &args.vectors {
        Some(p) => TableProvider::load(p, args.limit)?,
        None => TableProvider::toy(),
    };
    let p = LabelSet::from_file(&args.p)?;
    let q = LabelSet::from_file(&args.q)?;
    let r = mean_abs_cos_sim(&p, &q, &provider)?;
    if let Some(path) = &args.matrix {
        write_text(&output_path(path), &r.to_csv(&p, &q))?;
    }
    println!("S = {:.6} ({} × {} labels, embeddings: {})", r.score, p.len(), q.len(), provider.source_id());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let (generator, size) = match (&args.checkpoint, &args.config) {
        (Some(ckpt), _) => {
            let (g, cfg) = load_generator(ckpt)?;
            (g, cfg.image_size)
        }
        (None, Some(cfg_path)) => {
            let cfg = validate_config(cfg_path)?;
            let models = Models::new(&cfg, candle_core::DType::F32, &candle_core::Device::Cpu)?;
            (models.generator, cfg.image_size)
        }
        (None, None) => {
            let cfg = TrainConfig::default();
            let models = Models::new(&cfg, candle_core::DType::F32, &candle_core::Device::Cpu)?;
            (models.generator, cfg.image_size)
        }
    };
    let r = efficiency_report(&generator, CHANNELS, size, size, args.warmup, args.passes)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Preprocess(a) => preprocess(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Relevancy(a) => relevancy(a),
        Cmd::Report(a) => report(a),
    }
}

/// Parse `args`, run, and map the outcome to a process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

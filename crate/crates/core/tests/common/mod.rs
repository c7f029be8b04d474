#![allow(dead_code)]

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vadkit::config::TrainConfig;
use vadkit::losses::SsimConfig;
use vadkit::networks::params::Init;
use vadkit::networks::{Addressing, CriticConfig, Generator, GeneratorConfig, ParamStore};
use vadkit::synthesis::ExtractorConfig;
use vadkit::toybench::{generate_toy_dataset, ToyDataset, ToySpec};

pub fn tensor(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_slice(data, shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

pub fn tiny_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        frames: 4,
        channels: 3,
        widths: vec![4, 8],
        convs_per_stage: 1,
        memory_slots: 10,
        shrink: 0.0005,
        addressing: Addressing::PerLocation,
    }
}

pub fn tiny_generator(seed: u64, dtype: DType) -> (Generator, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Generator::new(
        tiny_generator_config(),
        &mut store,
        &mut Init {
            rng: &mut rng,
            dtype,
            device: &Device::Cpu,
        },
    )
    .unwrap();
    (g, store)
}

/// 32×32 corpus small enough for multi-run tests.
pub fn tiny_toy(dir: &Path) -> ToyDataset {
    let spec = ToySpec {
        resolution: 32,
        train_videos: 2,
        test_videos: 2,
        ti_videos: 1,
        train_length: 12,
        test_length: 14,
        ti_length: 4,
        anomaly_start: 6,
        anomaly_end: 10,
        ..ToySpec::default()
    };
    generate_toy_dataset(&spec, dir).unwrap()
}

pub fn tiny_train_config(ds: &ToyDataset, out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.train_root = Some(ds.train_manifest());
    cfg.ti_root = Some(ds.ti_manifest());
    cfg.image_size = 32;
    cfg.batch_size = 2;
    cfg.iterations = 2;
    cfg.generator = tiny_generator_config();
    cfg.critic = CriticConfig {
        channels: 3,
        base_width: 4,
        stages: 3,
    };
    cfg.extractor = ExtractorConfig {
        depth: 18,
        stages: 1,
        seed: 0,
    };
    cfg
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)` of backprop against central
/// differences, worst over `probes` random coordinates of `x0`.
pub fn fd_worst(x0: &[f64], shape: &[usize], probes: usize, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    use rand::Rng;
    const STEP: f64 = 1e-6;
    let var = candle_core::Var::from_tensor(&tensor(x0, shape)).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let analytic = flat(grads.get(var.as_tensor()).expect("gradient"));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..x0.len());
        let mut plus = x0.to_vec();
        let mut minus = x0.to_vec();
        plus[i] += STEP;
        minus[i] -= STEP;
        let numeric = (scalar(&f(&tensor(&plus, shape))) - scalar(&f(&tensor(&minus, shape)))) / (2.0 * STEP);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    worst
}

pub fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Probability that a random positive outranks a random negative, ties counting half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Windowed SSIM evaluated pixel by pixel on `C×H×W` data.
pub fn ssim_direct(x: &[f64], y: &[f64], c: usize, h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let g = cfg.taps();
    let k = cfg.window;
    let (c1, c2) = (cfg.k1 * cfg.k1, cfg.k2 * cfg.k2);
    let mut total = 0.0;
    let mut count = 0.0;
    for ch in 0..c {
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let wt = g[dy] * g[dx];
                        let i = (ch * h + oy + dy) * w + ox + dx;
                        mx += wt * x[i];
                        my += wt * y[i];
                        sxx += wt * x[i] * x[i];
                        syy += wt * y[i] * y[i];
                        sxy += wt * x[i] * y[i];
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

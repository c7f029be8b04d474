//! Synthetic benchmark: slow, linearly moving coloured shapes as normal
//! behaviour and a foreign shape of different kind and intensity in the test
//! videos as the anomaly, plus a donor set of unrelated shapes.
//!
//! While the foreign object is on screen one normal object is hidden and the
//! foreign object has the area of a normal one, so anomalous frames do not
//! simply hold more objects.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{build_manifest, frame_file_name, label_file, DatasetKind, DatasetManifest};
use crate::networks::params::standard_normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub resolution: usize,
    pub seed: u64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub ti_videos: usize,
    pub train_length: usize,
    pub test_length: usize,
    pub ti_length: usize,
    /// Normal objects per video.
    pub objects: usize,
    /// Frames `[anomaly_start, anomaly_end)` of every test video contain the
    /// foreign object.
    pub anomaly_start: usize,
    pub anomaly_end: usize,
    /// Per-pixel Gaussian noise, in 0..255 units.
    pub noise: f64,
    /// Speed of the foreign object relative to the normal speed range.
    pub anomaly_speed: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            seed: 0,
            train_videos: 8,
            test_videos: 6,
            ti_videos: 4,
            train_length: 60,
            test_length: 60,
            ti_length: 20,
            objects: 2,
            anomaly_start: 24,
            anomaly_end: 40,
            noise: 1.5,
            anomaly_speed: 1.0,
        }
    }
}

impl ToySpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("toy spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.resolution < 16 {
            errs.push(format!("resolution must be ≥ 16, got {}", self.resolution));
        }
        if self.train_videos == 0 || self.test_videos == 0 {
            errs.push("need at least one train and one test video".to_string());
        }
        if self.anomaly_start >= self.anomaly_end || self.anomaly_end > self.test_length {
            errs.push(format!(
                "anomaly span [{}, {}) must be non-empty and inside {} test frames",
                self.anomaly_start, self.anomaly_end, self.test_length
            ));
        }
        if self.anomaly_start == 0 && self.anomaly_end == self.test_length {
            errs.push("anomaly span covers every test frame; AUC would be undefined".to_string());
        }
        if !(self.anomaly_speed.is_finite() && self.anomaly_speed > 0.0) {
            errs.push(format!("anomaly_speed must be > 0, got {}", self.anomaly_speed));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            errs.push(format!("noise must be ≥ 0, got {}", self.noise));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Cross,
    Triangle,
    Diamond,
    Ring,
    Bar,
}

impl Shape {
    /// Is offset `(dx, dy)` from the centre inside a shape of radius `r`?
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Disc => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            Shape::Cross => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
            Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
            Shape::Diamond => dx.abs() + dy.abs() <= r,
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= r * r / 4.0
            }
            Shape::Bar => dx.abs() <= r && dy.abs() <= r / 3.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Mover {
    shape: Shape,
    color: [f64; 3],
    radius: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    fn at(&self, t: f64) -> (f64, f64) {
        (self.x + self.vx * t, self.y + self.vy * t)
    }
}

const NORMAL_COLORS: [[f64; 3]; 3] = [[200.0, 60.0, 60.0], [60.0, 80.0, 200.0], [60.0, 170.0, 70.0]];
const FOREIGN_COLORS: [[f64; 3]; 2] = [[190.0, 70.0, 190.0], [60.0, 190.0, 190.0]];
const NORMAL_SHAPES: [Shape; 2] = [Shape::Disc, Shape::Square];
const DONOR_SHAPES: [Shape; 3] = [Shape::Diamond, Shape::Ring, Shape::Bar];

fn random_mover(rng: &mut ChaCha8Rng, res: f64, shapes: &[Shape], speed: (f64, f64), radius: (f64, f64)) -> Mover {
    let shape = shapes[rng.random_range(0..shapes.len())];
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let s = rng.random_range(speed.0..speed.1) * res / 64.0;
    Mover {
        shape,
        color: NORMAL_COLORS[rng.random_range(0..NORMAL_COLORS.len())],
        radius: rng.random_range(radius.0..radius.1) * res / 64.0,
        x: rng.random_range(0.0..res),
        y: rng.random_range(0.0..res),
        vx: s * angle.cos(),
        vy: s * angle.sin(),
    }
}

/// Wrapped offset in `[-n/2, n/2)`.
fn torus(d: f64, n: f64) -> f64 {
    (d + n / 2.0).rem_euclid(n) - n / 2.0
}

#[derive(Debug, Clone, Copy)]
enum Visibility {
    Always,
    During(usize, usize),
    Outside(usize, usize),
}

impl Visibility {
    fn at(self, t: usize) -> bool {
        match self {
            Visibility::Always => true,
            Visibility::During(a, b) => t >= a && t < b,
            Visibility::Outside(a, b) => t < a || t >= b,
        }
    }
}

struct Scene {
    background: [f64; 2],
    movers: Vec<(Mover, Visibility)>,
}

impl Scene {
    fn render(&self, t: usize, res: usize, noise: f64, rng: &mut ChaCha8Rng) -> RgbImage {
        let n = res as f64;
        let mut img = RgbImage::new(res as u32, res as u32);
        let visible: Vec<(&Mover, f64, f64)> = self
            .movers
            .iter()
            .filter(|(_, vis)| vis.at(t))
            .map(|(m, _)| {
                let (x, y) = m.at(t as f64);
                (m, x, y)
            })
            .collect();
        for py in 0..res {
            let bg = self.background[0] + self.background[1] * (py as f64 / n - 0.5);
            for px in 0..res {
                let mut rgb = [bg; 3];
                for (m, cx, cy) in &visible {
                    // 2×2 supersampled coverage
                    let mut cover = 0.0;
                    for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                        let dx = torus(px as f64 + sx - cx, n);
                        let dy = torus(py as f64 + sy - cy, n);
                        if m.shape.contains(dx, dy, m.radius) {
                            cover += 0.25;
                        }
                    }
                    if cover > 0.0 {
                        for c in 0..3 {
                            rgb[c] = rgb[c] * (1.0 - cover) + m.color[c] * cover;
                        }
                    }
                }
                let px_val = rgb.map(|v| {
                    let v = v + noise * standard_normal(rng);
                    v.round().clamp(0.0, 255.0) as u8
                });
                img.put_pixel(px as u32, py as u32, Rgb(px_val));
            }
        }
        img
    }
}

fn write_video(root: &Path, id: &str, scene: &Scene, length: usize, spec: &ToySpec, rng: &mut ChaCha8Rng) -> Result<()> {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for t in 0..length {
        let path = dir.join(frame_file_name(t));
        scene
            .render(t, spec.resolution, spec.noise, rng)
            .save(&path)
            .map_err(|e| Error::Decode {
                path: path.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}

fn background(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [128.0 + rng.random_range(-6.0..6.0), rng.random_range(-16.0..16.0)]
}

fn normal_scene(rng: &mut ChaCha8Rng, spec: &ToySpec) -> Scene {
    let res = spec.resolution as f64;
    Scene {
        background: background(rng),
        movers: (0..spec.objects)
            .map(|_| (random_mover(rng, res, &NORMAL_SHAPES, (0.5, 1.5), (5.0, 7.0)), Visibility::Always))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub ti: DatasetManifest,
}

impl ToyDataset {
    pub fn train_manifest(&self) -> PathBuf {
        self.root.join("train.json")
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.root.join("test.json")
    }

    pub fn ti_manifest(&self) -> PathBuf {
        self.root.join("ti.json")
    }
}

/// Render the benchmark under `out` (`train/`, `test/`, `ti/` and their
/// manifests). Output is a pure function of `spec`.
pub fn generate_toy_dataset(spec: &ToySpec, out: &Path) -> Result<ToyDataset> {
    spec.validate()?;
    let res = spec.resolution as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let train_root = out.join("train");
    for v in 0..spec.train_videos {
        let scene = normal_scene(&mut rng, spec);
        write_video(&train_root, &format!("train_{v:02}"), &scene, spec.train_length, spec, &mut rng)?;
    }

    let test_root = out.join("test");
    for v in 0..spec.test_videos {
        let id = format!("test_{v:02}");
        let mut scene = normal_scene(&mut rng, spec);
        let span = (spec.anomaly_start, spec.anomaly_end);
        let mut foreign = random_mover(&mut rng, res, &[Shape::Cross, Shape::Triangle], (0.5 * spec.anomaly_speed, 1.5 * spec.anomaly_speed), (5.0, 7.0));
        // equal-area radius; a different intensity from the normal palette
        foreign.radius *= if foreign.shape == Shape::Cross { 1.15 } else { 1.7 };
        foreign.color = FOREIGN_COLORS[rng.random_range(0..FOREIGN_COLORS.len())];
        if let Some(first) = scene.movers.first_mut() {
            first.1 = Visibility::Outside(span.0, span.1);
        }
        scene.movers.push((foreign, Visibility::During(span.0, span.1)));
        write_video(&test_root, &id, &scene, spec.test_length, spec, &mut rng)?;
        let labels: Vec<String> = (0..spec.test_length)
            .map(|t| if t >= spec.anomaly_start && t < spec.anomaly_end { "1" } else { "0" }.to_string())
            .collect();
        let path = label_file(&test_root, &id);
        std::fs::write(&path, labels.join("\n") + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }

    let ti_root = out.join("ti");
    for v in 0..spec.ti_videos {
        let mut scene = Scene {
            background: background(&mut rng),
            movers: Vec::new(),
        };
        for _ in 0..spec.objects {
            let mut m = random_mover(&mut rng, res, &DONOR_SHAPES, (0.5, 3.0), (7.0, 11.0));
            m.color = [
                rng.random_range(20.0..250.0),
                rng.random_range(20.0..250.0),
                rng.random_range(20.0..250.0),
            ];
            scene.movers.push((m, Visibility::Always));
        }
        write_video(&ti_root, &format!("ti_{v:02}"), &scene, spec.ti_length, spec, &mut rng)?;
    }

    let ds = ToyDataset {
        root: out.to_path_buf(),
        train: build_manifest(&train_root, DatasetKind::VadTrain)?,
        test: build_manifest(&test_root, DatasetKind::VadTest)?,
        ti: if spec.ti_videos > 0 {
            build_manifest(&ti_root, DatasetKind::Ti)?
        } else {
            DatasetManifest {
                kind: DatasetKind::Ti,
                videos: Vec::new(),
            }
        },
    };
    ds.train.save(&ds.train_manifest())?;
    ds.test.save(&ds.test_manifest())?;
    ds.ti.save(&ds.ti_manifest())?;
    Ok(ds)
}

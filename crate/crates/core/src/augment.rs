//! Normal-frame augmentation: colour jitter, random rotation, random perspective.
//!
//! Frames are `C×H×W` in `[-1, 1]`; colour operations work in `[0, 1]`.
//! Geometric warps sample bilinearly and fill uncovered pixels with `-1`.

use nalgebra::{Matrix3, SMatrix, SVector};
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    /// Rotation range width in degrees; the angle is drawn from `±degrees/2`.
    pub degrees: f64,
    pub distortion: f64,
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            hue: 0.1,
            degrees: 360.0,
            distortion: 0.2,
            probability: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            degrees: 0.0,
            distortion: 0.0,
            probability: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("aug_brightness", self.brightness),
            ("aug_contrast", self.contrast),
            ("aug_saturation", self.saturation),
            ("aug_hue", self.hue),
            ("aug_degrees", self.degrees),
            ("aug_distortion", self.distortion),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if self.hue > 0.5 {
            return Err(Error::Config(format!("aug_hue must be ≤ 0.5, got {}", self.hue)));
        }
        if self.distortion > 1.0 {
            return Err(Error::Config(format!("aug_distortion must be ≤ 1, got {}", self.distortion)));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("aug_probability must be in [0, 1], got {}", self.probability)));
        }
        Ok(())
    }
}

/// Parameters drawn for one augmentation call.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    pub jitter: Option<[f64; 4]>,
    pub angle_deg: Option<f64>,
    /// Inward corner displacements (tl, tr, br, bl) in pixels.
    pub corners: Option<[(f64, f64); 4]>,
}

fn factor(rng: &mut impl Rng, m: f64) -> f64 {
    let u: f64 = rng.random();
    let lo = (1.0 - m).max(0.0);
    lo + u * (1.0 + m - lo)
}

impl AugmentDraw {
    /// The draw sequence is fixed so the stream stays aligned across configs.
    pub fn sample(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let apply: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let b = factor(rng, cfg.brightness);
        let c = factor(rng, cfg.contrast);
        let s = factor(rng, cfg.saturation);
        let hue = (rng.random::<f64>() * 2.0 - 1.0) * cfg.hue;
        let angle = (rng.random::<f64>() - 0.5) * cfg.degrees;
        let fx = cfg.distortion * w as f64 / 2.0;
        let fy = cfg.distortion * h as f64 / 2.0;
        let mut corners = [(0.0, 0.0); 4];
        for c in corners.iter_mut() {
            *c = (rng.random::<f64>() * fx, rng.random::<f64>() * fy);
        }
        Self {
            jitter: (apply[0] < cfg.probability).then_some([b, c, s, hue]),
            angle_deg: (apply[1] < cfg.probability).then_some(angle),
            corners: (apply[2] < cfg.probability).then_some(corners),
        }
    }
}

/// `g(·)`: jitter → rotation → perspective, clamped to `[-1, 1]`.
pub fn augment(frame: &Array3<f32>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Array3<f32> {
    let (_, h, w) = frame.dim();
    let draw = AugmentDraw::sample(cfg, h, w, rng);
    apply_draw(frame, &draw)
}

pub fn apply_draw(frame: &Array3<f32>, draw: &AugmentDraw) -> Array3<f32> {
    let mut out = frame.clone();
    if let Some([b, c, s, hue]) = draw.jitter {
        out = color_jitter(&out, b, c, s, hue);
    }
    if let Some(angle) = draw.angle_deg {
        if angle != 0.0 {
            let (_, h, w) = out.dim();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (sin, cos) = angle.to_radians().sin_cos();
            // inverse rotation maps output pixels back to the source
            let inv = Matrix3::new(
                cos,
                sin,
                cx - cos * cx - sin * cy,
                -sin,
                cos,
                cy + sin * cx - cos * cy,
                0.0,
                0.0,
                1.0,
            );
            out = warp(&out, &inv);
        }
    }
    if let Some(corners) = draw.corners {
        if corners.iter().any(|&(dx, dy)| dx != 0.0 || dy != 0.0) {
            let (_, h, w) = out.dim();
            let (x1, y1) = (w as f64 - 1.0, h as f64 - 1.0);
            let start = [(0.0, 0.0), (x1, 0.0), (x1, y1), (0.0, y1)];
            let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
            let mut end = start;
            for i in 0..4 {
                end[i].0 += signs[i].0 * corners[i].0;
                end[i].1 += signs[i].1 * corners[i].1;
            }
            if let Some(inv) = homography(&end, &start) {
                out = warp(&out, &inv);
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    out
}

fn color_jitter(frame: &Array3<f32>, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let mut img = frame.mapv(|v| ((v as f64 + 1.0) / 2.0) as f32);
    let gray_of = |img: &Array3<f32>, y: usize, x: usize| -> f32 {
        if c == 3 {
            0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
        } else {
            img[[0, y, x]]
        }
    };
    let changed = brightness != 1.0 || contrast != 1.0 || saturation != 1.0 || hue != 0.0;
    if !changed {
        return frame.clone();
    }
    if brightness != 1.0 {
        img.mapv_inplace(|v| (v * brightness as f32).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let mut mean = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                mean += gray_of(&img, y, x) as f64;
            }
        }
        let mean = (mean / (h * w) as f64) as f32;
        let f = contrast as f32;
        img.mapv_inplace(|v| (f * v + (1.0 - f) * mean).clamp(0.0, 1.0));
    }
    if saturation != 1.0 && c == 3 {
        let f = saturation as f32;
        for y in 0..h {
            for x in 0..w {
                let g = gray_of(&img, y, x);
                for ch in 0..3 {
                    let v = img[[ch, y, x]];
                    img[[ch, y, x]] = (f * v + (1.0 - f) * g).clamp(0.0, 1.0);
                }
            }
        }
    }
    if hue != 0.0 && c == 3 {
        for y in 0..h {
            for x in 0..w {
                let (hh, s, v) = rgb_to_hsv(img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
                let shifted = (hh + hue as f32).rem_euclid(1.0);
                let (r, g, b) = hsv_to_rgb(shifted, s, v);
                img[[0, y, x]] = r;
                img[[1, y, x]] = g;
                img[[2, y, x]] = b;
            }
        }
    }
    img.mapv(|v| v * 2.0 - 1.0)
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Projective map sending each `from[i]` to `to[i]`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = from[i];
        let (u, v) = to[i];
        let r = 2 * i;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        rhs[r] = u;
        rhs[r + 1] = v;
    }
    let sol = a.lu().solve(&rhs)?;
    Some(Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0))
}

/// Resample `frame` so that output pixel `p` reads source `inv · p`.
fn warp(frame: &Array3<f32>, inv: &Matrix3<f64>) -> Array3<f32> {
    const FILL: f32 = -1.0;
    let (c, h, w) = frame.dim();
    let mut out = Array3::<f32>::from_elem((c, h, w), FILL);
    let tap = |ch: usize, y: i64, x: i64| -> f32 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            FILL
        } else {
            frame[[ch, y as usize, x as usize]]
        }
    };
    for oy in 0..h {
        for ox in 0..w {
            let p = inv * nalgebra::Vector3::new(ox as f64, oy as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let top = tap(ch, y0, x0) * (1.0 - fx) + tap(ch, y0, x0 + 1) * fx;
                let bottom = tap(ch, y0 + 1, x0) * (1.0 - fx) + tap(ch, y0 + 1, x0 + 1) * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

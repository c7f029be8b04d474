//! Training objectives.
//!
//! Every loss takes and returns candle tensors so it can sit inside the
//! autograd graph; element-wise losses use mean reduction.

use candle_core::{DType, Device, Tensor, D};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::layers::{l2_normalize_rows, log_sum_exp_last};
use crate::raster::resize_nearest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub memory: f64,
    pub adversarial: f64,
    pub normalcy_gen: f64,
    pub normalcy: f64,
    pub relative_normalcy: f64,
    pub attention: f64,
    pub relative_attention: f64,
    pub arc_scale: f64,
    /// Additive angular margin in radians.
    pub arc_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            memory: 0.0025,
            adversarial: 0.05,
            normalcy_gen: 0.5,
            normalcy: 1.0,
            relative_normalcy: 0.01,
            attention: 1.0,
            relative_attention: 1.0,
            arc_scale: 64.0,
            arc_margin: 28.6_f64.to_radians(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_MEM", self.memory),
            ("alpha_D", self.adversarial),
            ("alpha_N", self.normalcy_gen),
            ("alpha_n", self.normalcy),
            ("alpha_rn", self.relative_normalcy),
            ("alpha_aa", self.attention),
            ("alpha_raa", self.relative_attention),
            ("arc_scale", self.arc_scale),
            ("arc_margin_deg", self.arc_margin.to_degrees()),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn non_empty(t: &Tensor, what: &str) -> Result<()> {
    if t.elem_count() == 0 {
        return Err(Error::EmptyBatch(what.to_string()));
    }
    Ok(())
}

pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "mse")?;
    Ok((pred - target)?.sqr()?.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    fn kernel(&self, channels: usize, dtype: DType, device: &Device) -> Result<Tensor> {
        let g = self.taps();
        let k = self.window;
        let mut w = Vec::with_capacity(channels * k * k);
        for _ in 0..channels {
            for a in &g {
                for b in &g {
                    w.push(a * b);
                }
            }
        }
        Ok(Tensor::from_vec(w, (channels, 1, k, k), device)?.to_dtype(dtype)?)
    }
}

/// Mean SSIM over valid Gaussian windows of `B×C×H×W` inputs in `[0, 1]`.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    same_shape(x, y, "ssim")?;
    let (_, c, h, w) = x.dims4()?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::Shape(format!("{h}×{w} frame is smaller than the {}-pixel SSIM window", cfg.window)));
    }
    let kernel = cfg.kernel(c, x.dtype(), x.device())?;
    let blur = |t: &Tensor| t.conv2d(&kernel, 0, 1, 1, c);
    let c1 = cfg.k1 * cfg.k1;
    let c2 = cfg.k2 * cfg.k2;
    let mu_x = blur(x)?;
    let mu_y = blur(y)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let var_x = (blur(&x.sqr()?)? - &mu_xx)?;
    let var_y = (blur(&y.sqr()?)? - &mu_yy)?;
    let cov = (blur(&(x * y)?)? - &mu_xy)?;
    let num = ((mu_xy.affine(2.0, c1))? * cov.affine(2.0, c2)?)?;
    let den = ((mu_xx + mu_yy)?.affine(1.0, c1)? * (var_x + var_y)?.affine(1.0, c2)?)?;
    Ok((num / den)?.mean_all()?)
}

/// `1 − SSIM` of frames in `[-1, 1]`, remapped to `[0, 1]` first.
pub fn loss_ssim(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    loss_ssim_with(pred, target, &SsimConfig::default())
}

pub fn loss_ssim_with(pred: &Tensor, target: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    let s = ssim(&pred.affine(0.5, 0.5)?, &target.affine(0.5, 0.5)?, cfg)?;
    Ok(s.affine(-1.0, 1.0)?)
}

fn abs_diff(t: &Tensor, dim: usize) -> Result<Option<Tensor>> {
    let n = t.dims()[dim];
    if n < 2 {
        return Ok(None);
    }
    let hi = t.narrow(dim, 1, n - 1)?;
    let lo = t.narrow(dim, 0, n - 1)?;
    Ok(Some((hi - lo)?.abs()?))
}

/// Image gradient difference: `mean| |∂x v̂| − |∂x v| | + mean| |∂y v̂| − |∂y v| |`.
///
/// Inputs are `…×H×W`; an axis with fewer than two pixels contributes nothing.
pub fn loss_gradient(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "gradient")?;
    let rank = pred.rank();
    if rank < 2 {
        return Err(Error::Shape("gradient loss needs at least 2-D inputs".into()));
    }
    let mut total = Tensor::zeros((), pred.dtype(), pred.device())?;
    for dim in [rank - 1, rank - 2] {
        if let (Some(gp), Some(gt)) = (abs_diff(pred, dim)?, abs_diff(target, dim)?) {
            total = (total + (gp - gt)?.abs()?.mean_all()?)?;
        }
    }
    Ok(total)
}

/// Mean over rows of the Shannon entropy `−Σ ŵ log ŵ`, with `0·log 0 = 0`.
pub fn loss_memory_entropy(weights: &Tensor) -> Result<Tensor> {
    let min = weights.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if min < 0.0 {
        return Err(Error::Contract(format!("negative addressing weight {min}")));
    }
    let w = if weights.rank() == 1 {
        weights.unsqueeze(0)?
    } else {
        weights.clone()
    };
    let positive = w.gt(0.0)?;
    let safe = positive.where_cond(&w, &w.ones_like()?)?;
    let ent = (&w * safe.log()?)?.sum(D::Minus1)?.neg()?;
    Ok(ent.mean_all()?)
}

/// `½·mean[(n̂ − 1)²] + ½·mean[ñ²]`.
pub fn loss_normalcy(n_hat: &Tensor, n_tilde: &Tensor) -> Result<Tensor> {
    non_empty(n_hat, "normalcy scores of predicted frames")?;
    non_empty(n_tilde, "normalcy scores of pseudo-abnormal frames")?;
    same_shape(n_hat, n_tilde, "normalcy")?;
    let a = n_hat.affine(1.0, -1.0)?.sqr()?.mean_all()?;
    let b = n_tilde.sqr()?.mean_all()?;
    Ok((a + b)?.affine(0.5, 0.0)?)
}

/// Relativistic-average normalcy:
/// `½·mean_i[(n̂_i − mean ñ − 1)²] + ½·mean_j[(ñ_j − mean n̂ + 1)²]`.
pub fn loss_relative_normalcy(n_hat: &Tensor, n_tilde: &Tensor) -> Result<Tensor> {
    non_empty(n_hat, "normalcy scores of predicted frames")?;
    non_empty(n_tilde, "normalcy scores of pseudo-abnormal frames")?;
    same_shape(n_hat, n_tilde, "relative normalcy")?;
    let mean_hat = n_hat.mean_all()?;
    let mean_tilde = n_tilde.mean_all()?;
    let a = n_hat.broadcast_sub(&mean_tilde)?.affine(1.0, -1.0)?.sqr()?.mean_all()?;
    let b = n_tilde.broadcast_sub(&mean_hat)?.affine(1.0, 1.0)?.sqr()?.mean_all()?;
    Ok((a + b)?.affine(0.5, 0.0)?)
}

/// `½·mean[(1 − 𝒜(v̂))²] + ½·mean[(M̃ − 𝒜(ṽ))²]`, all at attention resolution.
pub fn loss_attention_affirmation(attn_hat: &Tensor, attn_tilde: &Tensor, mask_small: &Tensor) -> Result<Tensor> {
    same_shape(attn_hat, attn_tilde, "attention affirmation")?;
    same_shape(attn_tilde, mask_small, "attention affirmation mask")?;
    non_empty(attn_hat, "attention maps")?;
    let a = attn_hat.affine(-1.0, 1.0)?.sqr()?.mean_all()?;
    let b = (mask_small - attn_tilde)?.sqr()?.mean_all()?;
    Ok((a + b)?.affine(0.5, 0.0)?)
}

/// Nearest-neighbour downsample of a frame-resolution mask to `h×w`.
pub fn mask_to_resolution(mask: &Array2<u8>, h: usize, w: usize) -> Array2<f32> {
    resize_nearest(mask.view(), h, w).mapv(f32::from)
}

pub const COS_CLAMP: f64 = 1e-7;

/// Additive angular margin softmax over two classes.
///
/// `attention` rows are vectorized maps (any positive scale); `labels[i]` is
/// 1 for normal and augmented-normal, 0 for pseudo-abnormal. `centers` is
/// `2×D`, row `k` the centre of class `k`. Returns the batch mean of
/// `−log(e^{s·cos(ω_y+m)} / (e^{s·cos(ω_y+m)} + e^{s·cos ω_other}))`.
pub fn loss_relative_attention(
    attention: &Tensor,
    labels: &[u8],
    centers: &Tensor,
    scale: f64,
    margin: f64,
) -> Result<Tensor> {
    let (n, d) = attention.dims2()?;
    let (k, d2) = centers.dims2()?;
    if n == 0 {
        return Err(Error::EmptyBatch("relative attention".into()));
    }
    if labels.len() != n || k != 2 || d != d2 {
        return Err(Error::Shape(format!(
            "attention {:?}, {} labels, centers {:?}",
            attention.dims(),
            labels.len(),
            centers.dims()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    let norms = attention.sqr()?.sum(D::Minus1)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Contract(format!("attention vector {i} has zero norm")));
    }
    let cos = l2_normalize_rows(attention)?
        .matmul(&l2_normalize_rows(centers)?.t()?)?
        .clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)?;
    let onehot: Vec<f64> = labels.iter().flat_map(|&l| if l == 1 { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
    let onehot = Tensor::from_vec(onehot, (n, 2), attention.device())?.to_dtype(attention.dtype())?;
    let cos_target = (&cos * &onehot)?.sum(D::Minus1)?;
    let cos_other = (&cos * onehot.affine(-1.0, 1.0)?)?.sum(D::Minus1)?;
    let sin_target = cos_target.sqr()?.affine(-1.0, 1.0)?.sqrt()?;
    let target_logit = (cos_target.affine(scale * margin.cos(), 0.0)? - sin_target.affine(scale * margin.sin(), 0.0)?)?;
    let other_logit = cos_other.affine(scale, 0.0)?;
    let logits = Tensor::stack(&[&target_logit, &other_logit], 1)?;
    let lse = log_sum_exp_last(&logits)?.squeeze(1)?;
    Ok((lse - target_logit)?.mean_all()?)
}

pub struct AdversarialTerms {
    /// `mean[½(𝒟(v̂) − 1)²]`
    pub generator: Tensor,
    /// `mean[½𝒟(v̂)²] + mean[½(𝒟(v) − 1)²]`
    pub discriminator: Tensor,
}

/// Least-squares adversarial pair.
pub fn loss_adversarial(d_hat: &Tensor, d_real: &Tensor) -> Result<AdversarialTerms> {
    non_empty(d_hat, "discriminator scores of predicted frames")?;
    non_empty(d_real, "discriminator scores of real frames")?;
    same_shape(d_hat, d_real, "adversarial")?;
    let generator = d_hat.affine(1.0, -1.0)?.sqr()?.mean_all()?.affine(0.5, 0.0)?;
    let fake = d_hat.sqr()?.mean_all()?;
    let real = d_real.affine(1.0, -1.0)?.sqr()?.mean_all()?;
    let discriminator = (fake + real)?.affine(0.5, 0.0)?;
    Ok(AdversarialTerms {
        generator,
        discriminator,
    })
}

/// `mean[½(𝒩(v̂) − 1)²]`, the classifier's pressure on the generator.
pub fn loss_normalcy_generator(n_hat: &Tensor) -> Result<Tensor> {
    non_empty(n_hat, "normalcy scores")?;
    Ok(n_hat.affine(1.0, -1.0)?.sqr()?.mean_all()?.affine(0.5, 0.0)?)
}

/// Values that can be combined into objectives: plain scalars or 0-d tensors.
pub trait LossValue: Clone {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Result<Self>;
    fn value(&self) -> Result<f64>;
}

impl LossValue for f64 {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Result<Self> {
        Ok(terms.iter().map(|(w, v)| w * **v).sum())
    }

    fn value(&self) -> Result<f64> {
        Ok(*self)
    }
}

impl LossValue for Tensor {
    fn weighted_sum(terms: &[(f64, &Self)]) -> Result<Self> {
        let (first, rest) = terms.split_first().ok_or_else(|| Error::EmptyBatch("no loss terms".into()))?;
        let mut acc = first.1.affine(first.0, 0.0)?;
        for (w, v) in rest {
            acc = (acc + v.affine(*w, 0.0)?)?;
        }
        Ok(acc)
    }

    fn value(&self) -> Result<f64> {
        Ok(self.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

/// Every component loss of one iteration.
#[derive(Debug, Clone)]
pub struct LossTerms<T> {
    pub mse: T,
    pub ssim: T,
    pub gradient: T,
    pub memory: T,
    pub adversarial_gen: T,
    pub adversarial_disc: T,
    pub normalcy_gen: T,
    pub normalcy: T,
    pub relative_normalcy: T,
    pub attention: T,
    pub relative_attention: T,
}

impl<T: LossValue> LossTerms<T> {
    pub fn named(&self) -> [(&'static str, &T); 11] {
        [
            ("L_MSE", &self.mse),
            ("L_SSM", &self.ssim),
            ("L_GD", &self.gradient),
            ("L_MEM", &self.memory),
            ("L_ADV_G", &self.adversarial_gen),
            ("L_D", &self.adversarial_disc),
            ("L_NG", &self.normalcy_gen),
            ("L_N", &self.normalcy),
            ("L_RN", &self.relative_normalcy),
            ("L_AA", &self.attention),
            ("L_RAA", &self.relative_attention),
        ]
    }

    fn check_finite(&self) -> Result<()> {
        check_finite(&self.named())
    }
}

/// Fails with [`Error::NonFiniteLoss`] naming the first non-finite term and
/// dumping every value.
pub fn check_finite<T: LossValue>(named: &[(&'static str, &T)]) -> Result<()> {
    let values = named
        .iter()
        .map(|(n, v)| Ok((*n, v.value()?)))
        .collect::<Result<Vec<_>>>()?;
    if let Some((term, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
        let dump = values.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ");
        return Err(Error::NonFiniteLoss {
            term: term.to_string(),
            dump,
        });
    }
    Ok(())
}

/// Generator-side terms.
#[derive(Debug, Clone)]
pub struct GeneratorTerms<T> {
    pub mse: T,
    pub ssim: T,
    pub gradient: T,
    pub memory: T,
    pub adversarial_gen: T,
    pub normalcy_gen: T,
}

/// Classifier-side terms.
#[derive(Debug, Clone)]
pub struct ClassifierTerms<T> {
    pub normalcy: T,
    pub relative_normalcy: T,
    pub attention: T,
    pub relative_attention: T,
}

/// `L_G = L_MSE + L_SSM + L_GD + α_MEM·L_MEM + α_D·L_adv + α_N·L_NG`.
pub fn generator_objective<T: LossValue>(t: &GeneratorTerms<T>, w: &LossWeights) -> Result<T> {
    check_finite(&[
        ("L_MSE", &t.mse),
        ("L_SSM", &t.ssim),
        ("L_GD", &t.gradient),
        ("L_MEM", &t.memory),
        ("L_ADV_G", &t.adversarial_gen),
        ("L_NG", &t.normalcy_gen),
    ])?;
    T::weighted_sum(&[
        (1.0, &t.mse),
        (1.0, &t.ssim),
        (1.0, &t.gradient),
        (w.memory, &t.memory),
        (w.adversarial, &t.adversarial_gen),
        (w.normalcy_gen, &t.normalcy_gen),
    ])
}

/// `L_N = α_n·L_N + α_rn·L_RN + α_aa·L_AA + α_raa·L_RAA`.
pub fn classifier_objective<T: LossValue>(t: &ClassifierTerms<T>, w: &LossWeights) -> Result<T> {
    check_finite(&[
        ("L_N", &t.normalcy),
        ("L_RN", &t.relative_normalcy),
        ("L_AA", &t.attention),
        ("L_RAA", &t.relative_attention),
    ])?;
    T::weighted_sum(&[
        (w.normalcy, &t.normalcy),
        (w.relative_normalcy, &t.relative_normalcy),
        (w.attention, &t.attention),
        (w.relative_attention, &t.relative_attention),
    ])
}

#[derive(Debug, Clone)]
pub struct Objectives<T> {
    pub generator: T,
    pub discriminator: T,
    pub classifier: T,
}

/// All three objectives; the discriminator objective is `L_D` itself.
pub fn compose_objectives<T: LossValue>(terms: &LossTerms<T>, w: &LossWeights) -> Result<Objectives<T>> {
    terms.check_finite()?;
    let generator = generator_objective(
        &GeneratorTerms {
            mse: terms.mse.clone(),
            ssim: terms.ssim.clone(),
            gradient: terms.gradient.clone(),
            memory: terms.memory.clone(),
            adversarial_gen: terms.adversarial_gen.clone(),
            normalcy_gen: terms.normalcy_gen.clone(),
        },
        w,
    )?;
    let classifier = classifier_objective(
        &ClassifierTerms {
            normalcy: terms.normalcy.clone(),
            relative_normalcy: terms.relative_normalcy.clone(),
            attention: terms.attention.clone(),
            relative_attention: terms.relative_attention.clone(),
        },
        w,
    )?;
    Ok(Objectives {
        generator,
        discriminator: terms.adversarial_disc.clone(),
        classifier,
    })
}

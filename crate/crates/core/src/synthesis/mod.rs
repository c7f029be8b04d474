//! Pseudo-anomaly synthesis with an untrained CNN.
//!
//! A donor frame is run through a frozen, randomly initialized network; the
//! channel-summed activations localize its foreground, which is binarized and
//! pasted at a random position and size onto a normal frame.

pub mod extractor;

use candle_core::{DType, Tensor, D};
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use extractor::{ExtractorConfig, FrozenFeatureExtractor};

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::networks::frames_to_tensor;
use crate::raster::{resize_bilinear, resize_nearest};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const MAX_RETRIES: usize = 16;

/// Channel-sum the features and min-max normalize each map to `[0, 1]`.
///
/// Accepts `d×h×w` or `B×d×h×w` and returns `h×w` or `B×h×w`. A constant map
/// normalizes to all zeros. Differentiable with respect to `features`.
pub fn scda_attention(features: &Tensor) -> Result<Tensor> {
    let batched = match features.rank() {
        3 => features.unsqueeze(0)?,
        4 => features.clone(),
        r => return Err(Error::Shape(format!("features must be rank 3 or 4, got {r}"))),
    };
    let (b, d, h, w) = batched.dims4()?;
    if d == 0 {
        return Err(Error::Contract("features need at least one channel".into()));
    }
    let total = batched.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite features in attention map".into()));
    }
    let summed = batched.sum(1)?.reshape((b, h * w))?;
    let min = summed.min_keepdim(D::Minus1)?;
    let range = summed.max_keepdim(D::Minus1)?.sub(&min)?;
    let positive = range.gt(0.0)?;
    let safe = positive.where_cond(&range, &range.ones_like()?)?;
    let out = summed.broadcast_sub(&min)?.broadcast_div(&safe)?.reshape((b, h, w))?;
    if features.rank() == 3 {
        Ok(out.squeeze(0)?)
    } else {
        Ok(out)
    }
}

/// `h×w` attention map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub values: Array2<f32>,
}

impl AttentionMap {
    pub fn from_features(features: &Tensor) -> Result<Self> {
        let a = scda_attention(features)?;
        let (h, w) = a.dims2()?;
        let data = a.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(Self {
            values: Array2::from_shape_vec((h, w), data).map_err(|e| Error::Shape(e.to_string()))?,
        })
    }
}

/// Strictly binary mask, `1` marking foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub values: Array2<u8>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// `M(i,j) = 1` iff `A(i,j) > threshold`.
pub fn binarize(attention: &AttentionMap, threshold: f64) -> BinaryMask {
    BinaryMask {
        values: attention.values.mapv(|a| u8::from(a as f64 > threshold)),
    }
}

/// Paste rectangle in pixel coordinates: x in `[b1, b2)`, y in `[b3, b4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasteBox {
    pub b1: usize,
    pub b2: usize,
    pub b3: usize,
    pub b4: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub extent_w: f64,
    pub extent_h: f64,
    pub beta: f64,
    /// Set when every retry produced a zero-area box and a 1×1 box was forced.
    #[serde(default)]
    pub forced: bool,
}

impl PasteBox {
    pub fn width(&self) -> usize {
        self.b2 - self.b1
    }

    pub fn height(&self) -> usize {
        self.b4 - self.b3
    }

    /// Evaluate the box for given draws; `None` when the clipped box has zero area.
    pub fn from_draws(h: usize, w: usize, center_x: f64, center_y: f64, beta: f64) -> Option<Self> {
        let extent_w = w as f64 * (1.0 - beta).max(0.0).sqrt();
        let extent_h = h as f64 * (1.0 - beta).max(0.0).sqrt();
        let clip = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as usize;
        let b1 = clip(center_x - extent_w / 2.0, w);
        let b2 = clip(center_x + extent_w / 2.0, w);
        let b3 = clip(center_y - extent_h / 2.0, h);
        let b4 = clip(center_y + extent_h / 2.0, h);
        (b2 > b1 && b4 > b3).then_some(Self {
            b1,
            b2,
            b3,
            b4,
            center_x,
            center_y,
            extent_w,
            extent_h,
            beta,
            forced: false,
        })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.b3..self.b4).contains(&y) && (self.b1..self.b2).contains(&x)
    }
}

/// Draw `β ~ U(0,1)`, `b_x ~ U(0,W)`, `b_y ~ U(0,H)` until the box has area.
pub fn sample_paste_box(h: usize, w: usize, rng: &mut impl Rng) -> Result<PasteBox> {
    if h == 0 || w == 0 {
        return Err(Error::Contract("paste box needs H, W > 0".into()));
    }
    let mut last = (0.0, 0.0, 1.0);
    for _ in 0..=MAX_RETRIES {
        let beta: f64 = rng.random_range(0.0..1.0);
        let cx: f64 = rng.random_range(0.0..w as f64);
        let cy: f64 = rng.random_range(0.0..h as f64);
        if let Some(b) = PasteBox::from_draws(h, w, cx, cy, beta) {
            return Ok(b);
        }
        last = (cx, cy, beta);
    }
    let (cx, cy, beta) = last;
    let x = (cx as usize).min(w - 1);
    let y = (cy as usize).min(h - 1);
    Ok(PasteBox {
        b1: x,
        b2: x + 1,
        b3: y,
        b4: y + 1,
        center_x: cx,
        center_y: cy,
        extent_w: 1.0,
        extent_h: 1.0,
        beta,
        forced: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_id: String,
    pub base_index: usize,
    pub donor_id: String,
    pub donor_index: usize,
    pub paste_box: PasteBox,
}

#[derive(Debug, Clone)]
pub struct PseudoAnomaly {
    pub frame: Frame,
    /// `H×W` ground-truth mask of replaced pixels.
    pub mask: Array2<u8>,
    pub provenance: Provenance,
    /// No pixel was replaced; the caller may redraw.
    pub empty_paste: bool,
}

/// Foreground mask of `donor` at the extractor's feature resolution.
pub fn donor_mask(donor: &Frame, extractor: &FrozenFeatureExtractor, threshold: f64) -> Result<BinaryMask> {
    let x = frames_to_tensor(&[&donor.pixels], extractor.dtype(), &candle_core::Device::Cpu)?;
    let features = extractor.forward(&x)?.squeeze(0)?;
    Ok(binarize(&AttentionMap::from_features(&features)?, threshold))
}

/// Paste the masked donor onto `base` inside `paste_box`.
///
/// The low-resolution mask is upsampled to `H×W` and then to the box extent
/// with nearest-neighbour; the masked donor is resized to the box with
/// bilinear interpolation. Base pixels are replaced where the box mask is 1.
pub fn paste(base: &Frame, donor: &Frame, mask: &BinaryMask, paste_box: PasteBox) -> Result<PseudoAnomaly> {
    let (c, h, w) = base.pixels.dim();
    if donor.pixels.dim() != (c, h, w) {
        return Err(Error::Shape(format!(
            "donor {:?} vs base {:?}",
            donor.pixels.dim(),
            base.pixels.dim()
        )));
    }
    if paste_box.b2 > w || paste_box.b4 > h || paste_box.width() == 0 || paste_box.height() == 0 {
        return Err(Error::Contract(format!("paste box {paste_box:?} outside {h}×{w}")));
    }
    let full_mask = resize_nearest(mask.values.view(), h, w);
    let mut object: Array3<f32> = donor.pixels.clone();
    for mut plane in object.axis_iter_mut(Axis(0)) {
        plane.zip_mut_with(&full_mask, |p, &m| {
            if m == 0 {
                *p = 0.0;
            }
        });
    }
    let (bw, bh) = (paste_box.width(), paste_box.height());
    let box_mask = resize_nearest(full_mask.view(), bh, bw);
    let box_object = resize_bilinear(object.view(), bh, bw);

    let mut frame = base.pixels.clone();
    let mut out_mask = Array2::<u8>::zeros((h, w));
    for y in 0..bh {
        for x in 0..bw {
            if box_mask[[y, x]] == 1 {
                let (fy, fx) = (paste_box.b3 + y, paste_box.b1 + x);
                out_mask[[fy, fx]] = 1;
                for ch in 0..c {
                    frame[[ch, fy, fx]] = box_object[[ch, y, x]];
                }
            }
        }
    }
    let empty_paste = out_mask.iter().all(|&m| m == 0);
    Ok(PseudoAnomaly {
        frame: Frame {
            pixels: frame,
            source_id: base.source_id.clone(),
            index: base.index,
        },
        mask: out_mask,
        provenance: Provenance {
            base_id: base.source_id.clone(),
            base_index: base.index,
            donor_id: donor.source_id.clone(),
            donor_index: donor.index,
            paste_box,
        },
        empty_paste,
    })
}

/// Full pipeline: localize the donor's foreground, draw a box, paste.
pub fn synthesize(
    base: &Frame,
    donor: &Frame,
    extractor: &FrozenFeatureExtractor,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<PseudoAnomaly> {
    let mask = donor_mask(donor, extractor, threshold)?;
    let paste_box = sample_paste_box(base.height(), base.width(), rng)?;
    paste(base, donor, &mask, paste_box)
}

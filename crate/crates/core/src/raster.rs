//! Resampling helpers for channel-first rasters and 2-D masks.
//!
//! Coordinates follow the half-pixel convention: destination pixel `d` samples
//! source position `(d + 0.5) * in / out - 0.5`, clamped to the source extent.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    let frac = (src - lo as f64) as f32;
    (lo, hi, if lo == hi { 0.0 } else { frac })
}

/// Bilinear resize of a `C×H×W` raster to `C×out_h×out_w`.
pub fn resize_bilinear(src: ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, in_h, in_w) = src.dim();
    if in_h == out_h && in_w == out_w {
        return src.to_owned();
    }
    let ys: Vec<_> = (0..out_h).map(|y| source_coord(y, in_h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, in_w, out_w)).collect();
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = src.index_axis(ndarray::Axis(0), ch);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
                let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Nearest-neighbour resize of a 2-D map; `src_index = floor(dst * in / out)`.
pub fn resize_nearest<T: Copy + Default>(src: ArrayView2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (in_h, in_w) = src.dim();
    let mut out = Array2::<T>::default((out_h, out_w));
    for oy in 0..out_h {
        let sy = (oy * in_h / out_h).min(in_h - 1);
        for ox in 0..out_w {
            let sx = (ox * in_w / out_w).min(in_w - 1);
            out[[oy, ox]] = src[[sy, sx]];
        }
    }
    out
}

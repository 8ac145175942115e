use ndarray::{Array2, Array3};

use super::BBox;
use crate::error::{Error, Result};

/// Bilinear taps for the continuous point `(y, x)` on an `h x w` grid whose
/// pixel centers sit at `index + 0.5`. Points beyond the outermost centers
/// clamp to the border.
#[inline]
pub(crate) fn bilinear_taps(h: usize, w: usize, y: f64, x: f64) -> [(usize, f64); 4] {
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ly = fy - y0 as f64;
    let lx = fx - x0 as f64;
    [
        (y0 * w + x0, (1.0 - ly) * (1.0 - lx)),
        (y0 * w + x1, (1.0 - ly) * lx),
        (y1 * w + x0, ly * (1.0 - lx)),
        (y1 * w + x1, ly * lx),
    ]
}

/// Bilinear sample of a row-major plane at continuous `(y, x)`.
pub fn sample_bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    bilinear_taps(h, w, y, x)
        .iter()
        .map(|&(i, wt)| plane[i] * wt)
        .sum()
}

fn cell_centers(start: f64, extent: f64, out: usize) -> impl Iterator<Item = f64> {
    let step = extent / out as f64;
    (0..out).map(move |i| start + (i as f64 + 0.5) * step)
}

/// RoIAlign with one bilinear sample at the center of each of the
/// `out x out` cells. `bbox` is in feature-map coordinates.
pub fn roi_align(features: &Array3<f64>, bbox: &BBox, out: usize) -> Result<Array3<f64>> {
    bbox.validate()?;
    if out == 0 {
        return Err(Error::InvalidArgument("roi_align output size must be > 0".into()));
    }
    let (c, h, w) = features.dim();
    let plane_len = h * w;
    let data = features
        .as_slice()
        .ok_or_else(|| Error::ShapeMismatch("features must be contiguous".into()))?;
    let mut result = Array3::zeros((c, out, out));
    let ys: Vec<f64> = cell_centers(bbox.y, bbox.h, out).collect();
    let xs: Vec<f64> = cell_centers(bbox.x, bbox.w, out).collect();
    for (oy, &y) in ys.iter().enumerate() {
        for (ox, &x) in xs.iter().enumerate() {
            let taps = bilinear_taps(h, w, y, x);
            for ch in 0..c {
                let plane = &data[ch * plane_len..(ch + 1) * plane_len];
                result[[ch, oy, ox]] = taps.iter().map(|&(i, wt)| plane[i] * wt).sum();
            }
        }
    }
    Ok(result)
}

/// Accumulate the gradient of [`roi_align`] into `grad_features`.
pub fn roi_align_backward(grad_out: &Array3<f64>, bbox: &BBox, grad_features: &mut Array3<f64>) {
    let (c, out, _) = grad_out.dim();
    let (_, h, w) = grad_features.dim();
    let plane_len = h * w;
    let ys: Vec<f64> = cell_centers(bbox.y, bbox.h, out).collect();
    let xs: Vec<f64> = cell_centers(bbox.x, bbox.w, out).collect();
    let gf = grad_features
        .as_slice_mut()
        .expect("gradient buffer is contiguous");
    for (oy, &y) in ys.iter().enumerate() {
        for (ox, &x) in xs.iter().enumerate() {
            let taps = bilinear_taps(h, w, y, x);
            for ch in 0..c {
                let g = grad_out[[ch, oy, ox]];
                if g == 0.0 {
                    continue;
                }
                let plane = &mut gf[ch * plane_len..(ch + 1) * plane_len];
                for &(i, wt) in &taps {
                    plane[i] += g * wt;
                }
            }
        }
    }
}

/// Overlap of `[a0, a1)` with every unit pixel interval, as `(pixel, length)`.
fn axis_overlaps(a0: f64, a1: f64, n: usize) -> Vec<(usize, f64)> {
    let first = a0.floor().max(0.0) as usize;
    let last = (a1.ceil().max(0.0) as usize).min(n);
    (first..last)
        .filter_map(|p| {
            let len = a1.min(p as f64 + 1.0) - a0.max(p as f64);
            (len > 0.0).then_some((p, len))
        })
        .collect()
}

/// Area-weighted average of `grid` over each of the `out x out` cells
/// tiling `bbox`. Area outside the grid contributes zero.
pub fn resample_to_roi(grid: &Array2<f64>, bbox: &BBox, out: usize) -> Result<Array2<f64>> {
    bbox.validate()?;
    if out == 0 {
        return Err(Error::InvalidArgument("resample output size must be > 0".into()));
    }
    let (h, w) = grid.dim();
    let sy = bbox.h / out as f64;
    let sx = bbox.w / out as f64;
    let col_weights: Vec<Vec<(usize, f64)>> = (0..out)
        .map(|j| axis_overlaps(bbox.x + j as f64 * sx, bbox.x + (j + 1) as f64 * sx, w))
        .collect();
    let mut result = Array2::zeros((out, out));
    for i in 0..out {
        let rows = axis_overlaps(bbox.y + i as f64 * sy, bbox.y + (i + 1) as f64 * sy, h);
        for (j, cols) in col_weights.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, wy) in &rows {
                for &(c, wx) in cols {
                    acc += grid[[r, c]] * wy * wx;
                }
            }
            result[[i, j]] = (acc / (sy * sx)).clamp(0.0, 1.0);
        }
    }
    Ok(result)
}

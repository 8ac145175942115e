//! Layer primitives with explicit backward passes. Feature maps are
//! `(channels, height, width)` arrays; matrices are `(channels, pixels)`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::maskops::resample::bilinear_taps;

/// Convolution with square kernel `k` (1 or 3), stride 1, zero padding `k / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `(out_ch, in_ch * k * k)`, rows ordered `(in_ch, ky, kx)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub k: usize,
}

impl Conv {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self {
            weight: Array2::zeros((out_ch, in_ch * k * k)),
            bias: Array1::zeros(out_ch),
            k,
        }
    }

    /// Uniform `[-b, b]` weights with `b = sqrt(gain / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, k: usize, gain: f64, rng: &mut R) -> Self {
        let fan_in = in_ch * k * k;
        let bound = (gain / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_ch, fan_in), || rng.gen_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(out_ch),
            k,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.weight.ncols() / (self.k * self.k)
    }

    pub fn out_ch(&self) -> usize {
        self.weight.nrows()
    }

    /// Forward pass; returns the output and the column matrix used by backward.
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let cols = if self.k == 1 {
            as_matrix(x).to_owned()
        } else {
            im2col3(x)
        };
        let out = self.apply_matrix(cols.view());
        (
            out.into_shape_with_order((self.out_ch(), h, w)).expect("conv output shape"),
            cols,
        )
    }

    /// `W * cols + b` for a `(in_ch * k * k, pixels)` matrix.
    pub fn apply_matrix(&self, cols: ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.weight.dot(&cols);
        out += &self.bias.view().insert_axis(Axis(1));
        out
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the column matrix.
    pub fn backward_matrix(&self, cols: ArrayView2<f64>, dout: ArrayView2<f64>, grad: &mut Conv) -> Array2<f64> {
        Self::accumulate_param_grads(cols, dout, grad);
        self.weight.t().dot(&dout)
    }

    /// Parameter gradients only.
    pub fn accumulate_param_grads(cols: ArrayView2<f64>, dout: ArrayView2<f64>, grad: &mut Conv) {
        grad.weight += &dout.dot(&cols.t());
        grad.bias += &dout.sum_axis(Axis(1));
    }

    pub fn backward(&self, cols: &Array2<f64>, dout: &Array3<f64>, grad: &mut Conv) -> Array3<f64> {
        let (_, h, w) = dout.dim();
        let dcols = self.backward_matrix(cols.view(), as_matrix(dout), grad);
        if self.k == 1 {
            dcols.into_shape_with_order((self.in_ch(), h, w)).expect("conv input shape")
        } else {
            col2im3(&dcols, self.in_ch(), h, w)
        }
    }
}

/// View a standard-layout `(c, h, w)` array as `(c, h * w)`.
pub fn as_matrix(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (c, h, w) = x.dim();
    x.view().into_shape_with_order((c, h * w)).expect("standard layout feature map")
}

fn im2col3(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * 9, h * w));
    for ch in 0..c {
        let plane = x.index_axis(Axis(0), ch);
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(ch * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("contiguous row");
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = plane.row(sy as usize);
                    let dst = &mut row[y * w..(y + 1) * w];
                    // Output column x reads input column x + kx - 1.
                    let (lo, hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for xo in lo..hi {
                        dst[xo] = src[xo + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im3(dcols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        let mut plane = dx.index_axis_mut(Axis(0), ch);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = dcols.row(ch * 9 + ky * 3 + kx);
                let row = row.as_slice().expect("contiguous row");
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let mut dst = plane.row_mut(sy as usize);
                    let src = &row[y * w..(y + 1) * w];
                    let (lo, hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for xo in lo..hi {
                        dst[xo + kx - 1] += src[xo];
                    }
                }
            }
        }
    }
    dx
}

pub fn relu_inplace(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zero `grad` wherever the (post-activation) output was not positive.
pub fn relu_backward_inplace(grad: &mut Array3<f64>, activated: &Array3<f64>) {
    grad.zip_mut_with(activated, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// 2x2 average pooling with stride 2. Odd trailing rows / columns form
/// partial windows averaged over the pixels they contain.
pub fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let win = x.slice(s![ch, 2 * oy..(2 * oy + 2).min(h), 2 * ox..(2 * ox + 2).min(w)]);
                out[[ch, oy, ox]] = win.sum() / win.len() as f64;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(dout: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (c, oh, ow) = dout.dim();
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y1, x1) = ((2 * oy + 2).min(h), (2 * ox + 2).min(w));
                let n = ((y1 - 2 * oy) * (x1 - 2 * ox)) as f64;
                let g = dout[[ch, oy, ox]] / n;
                dx.slice_mut(s![ch, 2 * oy..y1, 2 * ox..x1]).mapv_inplace(|v| v + g);
            }
        }
    }
    dx
}

/// Bilinear x2 upsampling of a single `(h, w)` plane, half-pixel aligned.
pub fn upsample2(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let src = x.as_standard_layout();
    let src = src.as_slice().expect("contiguous");
    Array2::from_shape_fn((2 * h, 2 * w), |(oy, ox)| {
        bilinear_taps(h, w, (oy as f64 + 0.5) / 2.0, (ox as f64 + 0.5) / 2.0)
            .iter()
            .map(|&(i, wt)| src[i] * wt)
            .sum()
    })
}

pub fn upsample2_backward(dout: &Array2<f64>) -> Array2<f64> {
    let (oh, ow) = dout.dim();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Array2::<f64>::zeros((h, w));
    {
        let d = dx.as_slice_mut().expect("contiguous");
        for ((oy, ox), &g) in dout.indexed_iter() {
            for (i, wt) in bilinear_taps(h, w, (oy as f64 + 0.5) / 2.0, (ox as f64 + 0.5) / 2.0) {
                d[i] += g * wt;
            }
        }
    }
    dx
}

use image::RgbImage;
use ndarray::{Array2, Array3};

use super::layers::{as_matrix, avg_pool2, avg_pool2_backward, relu_backward_inplace, relu_inplace, Conv};
use super::ModelParams;
use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 16;

/// RGB image as a `(3, h, w)` array scaled to `[0, 1]`.
pub fn image_to_tensor(image: &RgbImage) -> Array3<f64> {
    let (w, h) = image.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        image.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneCache {
    cols: Vec<Array2<f64>>,
    /// Post-ReLU output of each block.
    acts: Vec<Array3<f64>>,
}

impl BackboneCache {
    /// Append the on/off state of every ReLU unit.
    pub(crate) fn push_relu_pattern(&self, out: &mut Vec<bool>) {
        for a in &self.acts {
            out.extend(a.iter().map(|&v| v > 0.0));
        }
    }
}

impl ModelParams {
    /// Four `[3x3 conv, ReLU]` blocks with 2x2 average pooling after the
    /// first two; output stride 4.
    pub fn backbone_forward(&self, image: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.backbone_forward_cached(image)?.0)
    }

    pub fn backbone_forward_cached(&self, image: &Array3<f64>) -> Result<(Array3<f64>, BackboneCache)> {
        let (c, h, w) = image.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 image channels, got {c}")));
        }
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        let mut cols = Vec::with_capacity(4);
        let mut acts = Vec::with_capacity(4);
        let mut x = image.clone();
        for (i, conv) in self.backbone.iter().enumerate() {
            let (mut y, col) = conv.forward(&x);
            relu_inplace(&mut y);
            cols.push(col);
            x = if i < 2 { avg_pool2(&y) } else { y.clone() };
            acts.push(y);
        }
        Ok((x, BackboneCache { cols, acts }))
    }

    /// Accumulate backbone parameter gradients for `dfeatures`.
    pub fn backbone_backward(&self, cache: &BackboneCache, dfeatures: Array3<f64>, grads: &mut ModelParams) {
        let mut d = dfeatures;
        for i in (0..4).rev() {
            if i < 2 {
                let (_, h, w) = cache.acts[i].dim();
                d = avg_pool2_backward(&d, h, w);
            }
            relu_backward_inplace(&mut d, &cache.acts[i]);
            let conv = &self.backbone[i];
            if i == 0 {
                // The image gradient is never needed.
                Conv::accumulate_param_grads(cache.cols[0].view(), as_matrix(&d), &mut grads.backbone[0]);
            } else {
                d = conv.backward(&cache.cols[i], &d, &mut grads.backbone[i]);
            }
        }
    }
}

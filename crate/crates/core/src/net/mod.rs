//! Forward and backward computation of the backbone and mask branch.

mod backbone;
mod head;
pub mod layers;
mod params;

pub use backbone::{image_to_tensor, BackboneCache, MIN_IMAGE_SIDE};
pub use head::{normalize_affinity, normalize_affinity_backward, RoiCache, RoiForward, RoiOutputGrads, ZScore};
pub use params::{
    AffinityParams, Architecture, BoundaryParams, ModelParams, NormalizeMode, ALPHA_INIT, OUTPUT_BIAS_INIT, STRIDE,
    ZSCORE_EPS,
};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::maskops::{roi_align, BBox};

impl ModelParams {
    /// Backbone, then RoIAlign and the mask branch for every box (given in
    /// image pixels).
    pub fn full_forward(&self, image: &Array3<f64>, boxes: &[BBox]) -> Result<Vec<RoiForward>> {
        if boxes.is_empty() {
            return Err(Error::InvalidArgument("full_forward needs at least one box".into()));
        }
        let (_, h, w) = image.dim();
        let features = self.backbone_forward(image)?;
        boxes
            .iter()
            .map(|b| {
                b.validate_in(h, w)?;
                let x = self.roi_features(&features, b)?;
                self.roi_forward(&x)
            })
            .collect()
    }

    /// RoIAlign crop of backbone features for an image-space box.
    pub fn roi_features(&self, features: &Array3<f64>, bbox: &BBox) -> Result<Array3<f64>> {
        roi_align(features, &bbox.scaled(1.0 / STRIDE as f64), self.arch.roi_size)
    }
}

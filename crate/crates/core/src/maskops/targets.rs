use ndarray::Array2;

use super::{extract_boundary, resample_to_roi, BBox, BinaryMask, BoundaryTarget};
use crate::error::Result;

/// Resolutions and thresholds used to build per-RoI supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    /// Side of the mask / boundary output grid.
    pub head_res: usize,
    /// Side of the affinity grid.
    pub affinity_res: usize,
    pub fg_threshold: f64,
    pub boundary_width: usize,
}

impl Default for TargetParams {
    fn default() -> Self {
        Self {
            head_res: 28,
            affinity_res: 14,
            fg_threshold: 0.5,
            boundary_width: 1,
        }
    }
}

/// Supervision for one RoI.
#[derive(Debug, Clone)]
pub struct RoiTargets {
    /// Soft mask in `[0, 1]` at head resolution.
    pub mask_target: Array2<f64>,
    pub boundary_target: BoundaryTarget,
    /// Row-major positions on the affinity grid.
    pub fg_indices: Vec<usize>,
    pub bg_indices: Vec<usize>,
}

impl RoiTargets {
    /// True when either side of the foreground / background split is empty;
    /// the affinity term skips such RoIs.
    pub fn affinity_degenerate(&self) -> bool {
        self.fg_indices.is_empty() || self.bg_indices.is_empty()
    }
}

pub fn make_roi_targets(mask: &BinaryMask, bbox: &BBox, params: &TargetParams) -> Result<RoiTargets> {
    bbox.validate()?;
    let grid = mask.to_grid();
    let mask_target = resample_to_roi(&grid, bbox, params.head_res)?;
    let boundary_target = extract_boundary(&mask_target, params.fg_threshold, params.boundary_width);
    let coarse = resample_to_roi(&grid, bbox, params.affinity_res)?;
    let (mut fg_indices, mut bg_indices) = (Vec::new(), Vec::new());
    for (i, &v) in coarse.iter().enumerate() {
        if v >= params.fg_threshold {
            fg_indices.push(i);
        } else {
            bg_indices.push(i);
        }
    }
    Ok(RoiTargets {
        mask_target,
        boundary_target,
        fg_indices,
        bg_indices,
    })
}

use ndarray::Array3;
use rayon::prelude::*;

use super::{affinity_loss_grad, bce_with_logits, total_loss, LossReport, LossWeights, RoiLoss};
use crate::error::{Error, Result};
use crate::maskops::{roi_align_backward, BBox, RoiTargets};
use crate::net::{ModelParams, RoiOutputGrads, STRIDE};

/// One RoI of a training batch.
#[derive(Debug, Clone)]
pub struct RoiSample {
    /// Image-space box.
    pub bbox: BBox,
    pub targets: RoiTargets,
    /// False when the RoI's category has no mask supervision.
    pub supervised: bool,
}

/// One image of a training batch, already converted to a `(3, H, W)` tensor.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub image: Array3<f64>,
    pub rois: Vec<RoiSample>,
}

struct Normalizers {
    segment: f64,
    boundary: f64,
    affinity: f64,
}

/// Composite loss over a batch; when `grads` is given, the gradient of the
/// total is accumulated into it.
///
/// Images are processed in parallel on the current rayon pool. Each image
/// produces its own gradient buffer and the buffers are summed in batch
/// order, so the result does not depend on the thread count.
pub fn batch_objective(
    params: &ModelParams,
    batch: &[ImageSample],
    weights: &LossWeights,
    grads: Option<&mut ModelParams>,
) -> Result<LossReport> {
    let arch = &params.arch;
    let supervised = || batch.iter().flat_map(|s| s.rois.iter()).filter(|r| r.supervised);
    let n_seg = supervised().count();
    let n_aff = if arch.use_affinity {
        supervised().filter(|r| !r.targets.affinity_degenerate()).count()
    } else {
        0
    };
    let norm = Normalizers {
        segment: n_seg.max(1) as f64,
        boundary: n_seg.max(1) as f64,
        affinity: n_aff.max(1) as f64,
    };
    let want_grads = grads.is_some();

    let run = |sample: &ImageSample| image_objective(params, sample, weights, &norm, want_grads);
    let per_image: Vec<(Vec<RoiLoss>, Option<ModelParams>)> = if rayon::current_num_threads() > 1 {
        batch.par_iter().map(run).collect::<Result<_>>()?
    } else {
        batch.iter().map(run).collect::<Result<_>>()?
    };

    let mut rois = Vec::new();
    let mut total_grads = grads;
    for (losses, g) in per_image {
        rois.extend(losses);
        if let (Some(acc), Some(g)) = (total_grads.as_deref_mut(), g) {
            acc.add_scaled(&g, 1.0);
        }
    }
    Ok(total_loss(&rois, weights))
}

fn image_objective(
    params: &ModelParams,
    sample: &ImageSample,
    weights: &LossWeights,
    norm: &Normalizers,
    want_grads: bool,
) -> Result<(Vec<RoiLoss>, Option<ModelParams>)> {
    let arch = &params.arch;
    let (_, h, w) = sample.image.dim();
    let mut losses = vec![RoiLoss::default(); sample.rois.len()];
    if !sample.rois.iter().any(|r| r.supervised) {
        return Ok((losses, None));
    }

    let (features, bcache) = params.backbone_forward_cached(&sample.image)?;
    let mut grads = want_grads.then(|| params.zeros_like());
    let mut dfeatures = Array3::zeros(features.dim());
    let inv_stride = 1.0 / STRIDE as f64;

    for (roi, out) in sample.rois.iter().zip(losses.iter_mut()) {
        if !roi.supervised {
            continue;
        }
        roi.bbox.validate_in(h, w)?;
        let fbox = roi.bbox.scaled(inv_stride);
        let x = params.roi_features(&features, &roi.bbox)?;
        let (fwd, cache) = params.roi_forward_cached(&x)?;
        out.supervised = true;

        let (seg, dseg) = bce_with_logits(&fwd.mask_logits, &roi.targets.mask_target)?;
        out.segment = Some(seg);
        let mut upstream = RoiOutputGrads {
            mask_logits: Some(dseg * (weights.segment / norm.segment)),
            ..Default::default()
        };

        if let Some(logits) = &fwd.boundary_logits {
            let (b, db) = bce_with_logits(logits, &roi.targets.boundary_target.as_real())?;
            out.boundary = Some(b);
            upstream.boundary_logits = Some(db * (weights.boundary / norm.boundary));
        }

        if let Some(a) = &fwd.affinity {
            let t = &roi.targets;
            if a.nrows() != arch.roi_size * arch.roi_size {
                return Err(Error::ShapeMismatch(format!(
                    "affinity {:?} vs targets on a {}x{} grid",
                    a.dim(),
                    arch.roi_size,
                    arch.roi_size
                )));
            }
            if let Some((l, da)) = affinity_loss_grad(a, &t.fg_indices, &t.bg_indices, arch.normalize_mode) {
                out.affinity = Some(l);
                upstream.affinity = Some(da * (weights.affinity / norm.affinity));
            }
        }

        if let Some(g) = grads.as_mut() {
            let dx = params.roi_backward(&fwd, &cache, &upstream, g);
            roi_align_backward(&dx, &fbox, &mut dfeatures);
        }
    }

    if let Some(g) = grads.as_mut() {
        params.backbone_backward(&bcache, dfeatures, g);
    }
    Ok((losses, grads))
}

/// On/off state of every ReLU unit evaluated by [`batch_objective`].
///
/// The objective is smooth on any parameter interval over which this
/// pattern does not change.
pub fn relu_pattern(params: &ModelParams, batch: &[ImageSample]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for sample in batch {
        if !sample.rois.iter().any(|r| r.supervised) {
            continue;
        }
        let (features, bcache) = params.backbone_forward_cached(&sample.image)?;
        bcache.push_relu_pattern(&mut out);
        for roi in sample.rois.iter().filter(|r| r.supervised) {
            let x = params.roi_features(&features, &roi.bbox)?;
            params.roi_forward_cached(&x)?.1.push_relu_pattern(&mut out);
        }
    }
    Ok(out)
}

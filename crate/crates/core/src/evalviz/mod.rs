//! Oracle-box mask AP and diagnostic heatmaps.

mod ablation;
mod heatmap;

pub use ablation::{run_ablation, run_variant, AblationRun, AblationTable, VariantResult, VARIANTS};
pub use heatmap::{affinity_heatmap, colormap, emit_heatmaps, minmax_normalize, HEATMAP_SCALE};

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::predict_masks;
use crate::error::{Error, Result};
use crate::maskops::{mask_iou, sample_bilinear, BBox, BinaryMask};
use crate::net::ModelParams;
use crate::shapesdata::{CategorySplit, Dataset, ImageSplit, Instance, SceneSample};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

// Thresholds such as 0.5 + 0.05 * 2 are not exact in binary; an IoU equal
// to the decimal threshold must still count.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Fraction of IoUs at or above `t`.
pub fn fraction_above(ious: &[f64], t: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v >= t - THRESHOLD_SLACK).count() as f64 / ious.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    /// Instances behind the numbers.
    pub n: usize,
}

impl Metrics {
    pub fn from_ious(ious: &[f64]) -> Self {
        let ts = iou_thresholds();
        Self {
            ap: ts.iter().map(|&t| fraction_above(ious, t)).sum::<f64>() / ts.len() as f64,
            ap50: fraction_above(ious, 0.5),
            ap75: fraction_above(ious, 0.75),
            n: ious.len(),
        }
    }

    /// Unweighted mean over categories; `n` sums the instance counts.
    fn mean_of<'a>(items: impl Iterator<Item = &'a Metrics>) -> Self {
        let items: Vec<_> = items.collect();
        if items.is_empty() {
            return Self::default();
        }
        let k = items.len() as f64;
        Self {
            ap: items.iter().map(|m| m.ap).sum::<f64>() / k,
            ap50: items.iter().map(|m| m.ap50).sum::<f64>() / k,
            ap75: items.iter().map(|m| m.ap75).sum::<f64>() / k,
            n: items.iter().map(|m| m.n).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<String, Metrics>,
    pub base: Metrics,
    pub novel: Metrics,
    pub all: Metrics,
}

/// Paste an `M x M` probability grid into `bbox` at image resolution and
/// binarize at 0.5. Only pixels whose centers fall inside the box can be set.
pub fn paste_mask(prob: &Array2<f64>, bbox: &BBox, height: usize, width: usize) -> BinaryMask {
    let (mh, mw) = prob.dim();
    let plane = prob.as_standard_layout();
    let plane = plane.as_slice().expect("standard layout");
    let mut out = BinaryMask::new(height, width);
    let r0 = (bbox.y - 0.5).ceil().max(0.0) as usize;
    let c0 = (bbox.x - 0.5).ceil().max(0.0) as usize;
    for r in r0..height {
        let cy = r as f64 + 0.5;
        if cy >= bbox.y2() {
            break;
        }
        for c in c0..width {
            let cx = c as f64 + 0.5;
            if cx >= bbox.x2() {
                break;
            }
            let gy = (cy - bbox.y) / bbox.h * mh as f64;
            let gx = (cx - bbox.x) / bbox.w * mw as f64;
            if sample_bilinear(plane, mh, mw, gy, gx) >= 0.5 {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Evaluate arbitrary per-instance predictions on one split.
pub fn evaluate_with<F>(dataset: &Dataset, split: ImageSplit, predict: F) -> Result<EvalReport>
where
    F: Fn(&SceneSample) -> Result<Vec<BinaryMask>> + Sync,
{
    let scenes: Vec<&SceneSample> = dataset.split(split).filter(|s| !s.instances.is_empty()).collect();
    if scenes.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split:?} has no annotated images")));
    }
    let per_scene: Vec<Vec<(u32, f64)>> = scenes
        .par_iter()
        .map(|scene| {
            let masks = predict(scene)?;
            if masks.len() != scene.instances.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} predictions for {} instances in image {}",
                    masks.len(),
                    scene.instances.len(),
                    scene.image_id
                )));
            }
            scene
                .instances
                .iter()
                .zip(&masks)
                .map(|(inst, m)| Ok((inst.category_id, mask_iou(m, &inst.mask)?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut ious: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (cat, iou) in per_scene.into_iter().flatten() {
        ious.entry(cat).or_default().push(iou);
    }
    let mut per_category = BTreeMap::new();
    let mut by_split: BTreeMap<CategorySplit, Vec<Metrics>> = BTreeMap::new();
    for (cat, v) in &ious {
        let entry = dataset
            .category(*cat)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {cat}")))?;
        let m = Metrics::from_ious(v);
        by_split.entry(entry.split).or_default().push(m);
        per_category.insert(entry.name.clone(), m);
    }
    let pick = |s: CategorySplit| Metrics::mean_of(by_split.get(&s).into_iter().flatten());
    Ok(EvalReport {
        base: pick(CategorySplit::Base),
        novel: pick(CategorySplit::Novel),
        all: Metrics::mean_of(per_category.values()),
        per_category,
    })
}

/// Oracle-box evaluation: every ground-truth box is fed to the model and
/// the binarized prediction is compared with the instance mask.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, split: ImageSplit) -> Result<EvalReport> {
    evaluate_with(dataset, split, |scene| predict_scene(params, scene))
}

/// Ground truth as prediction; every metric is 1 by construction.
pub fn evaluate_ground_truth(dataset: &Dataset, split: ImageSplit) -> Result<EvalReport> {
    evaluate_with(dataset, split, |scene| Ok(scene.instances.iter().map(|i| i.mask.clone()).collect()))
}

/// Pasted binary masks for every instance of a scene.
pub fn predict_scene(params: &ModelParams, scene: &SceneSample) -> Result<Vec<BinaryMask>> {
    let boxes: Vec<BBox> = scene.instances.iter().map(|i: &Instance| i.bbox).collect();
    let probs = predict_masks(params, scene, &boxes)?;
    Ok(probs
        .iter()
        .zip(&boxes)
        .map(|(p, b)| paste_mask(p, b, scene.height(), scene.width()))
        .collect())
}

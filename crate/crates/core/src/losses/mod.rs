//! Supervision terms for the mask branch.
//!
//! The total objective for mask-annotated RoIs is
//! `l2 * L_boundary + l3 * L_affinity + l4 * L_segment`; the detection weight
//! `l1` is carried for completeness but has no term behind it, since boxes
//! come from annotations.

mod gradcheck;
mod objective;
mod oracle;

pub use gradcheck::{gradient_check, GradCheckReport, SmoothnessProbe, GRADCHECK_STEP, GRADCHECK_TOL};
pub use objective::{batch_objective, relu_pattern, ImageSample, RoiSample};
pub use oracle::{brute_force_affinity, brute_force_attention, ORACLE_MAX_SIDE};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::BoundaryTarget;
use crate::net::NormalizeMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub detect: f64,
    pub boundary: f64,
    pub affinity: f64,
    pub segment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            detect: 1.0,
            boundary: 0.5,
            affinity: 0.5,
            segment: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.detect, self.boundary, self.affinity, self.segment];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Batch-level loss summary, one line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub boundary: f64,
    pub affinity: f64,
    pub segment: f64,
    pub total: f64,
    /// RoIs whose affinity term was evaluated (non-empty Fg and Bg).
    pub n_rois_affinity: usize,
    /// RoIs that carried mask supervision.
    pub n_rois_supervised: usize,
}

/// Per-RoI loss values; `None` marks a term that was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoiLoss {
    pub boundary: Option<f64>,
    pub affinity: Option<f64>,
    pub segment: Option<f64>,
    /// False for RoIs without mask supervision (novel categories in the
    /// partially supervised regime); they are excluded from every term.
    pub supervised: bool,
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn check_shapes(logits: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if logits.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs target {:?}",
            logits.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with logits and soft targets in `[0, 1]`,
/// plus its gradient with respect to the logits.
pub fn bce_with_logits(logits: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_shapes(logits, target)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((g, &l), &t) in grad.iter_mut().zip(logits.iter()).zip(target.iter()) {
        // t * softplus(-l) + (1 - t) * softplus(l)
        loss += softplus(l) - t * l;
        *g = (crate::net::layers::sigmoid(l) - t) / n;
    }
    Ok((loss / n, grad))
}

pub fn boundary_loss(logits: &Array2<f64>, target: &BoundaryTarget) -> Result<f64> {
    Ok(bce_with_logits(logits, &target.as_real())?.0)
}

pub fn segment_loss(logits: &Array2<f64>, mask_target: &Array2<f64>) -> Result<f64> {
    Ok(bce_with_logits(logits, mask_target)?.0)
}

/// Foreground-to-foreground and foreground-to-background affinity mass.
///
/// Row mode divides by `|Fg|` so each sum is a mean over foreground query
/// rows; global mode keeps the raw sums.
pub fn affinity_sums(a: &Array2<f64>, fg: &[usize], bg: &[usize], mode: NormalizeMode) -> (f64, f64) {
    let mut s_fg = 0.0;
    let mut s_bg = 0.0;
    for &i in fg {
        let row = a.row(i);
        s_fg += fg.iter().map(|&m| row[m]).sum::<f64>();
        s_bg += bg.iter().map(|&m| row[m]).sum::<f64>();
    }
    match mode {
        NormalizeMode::Row => {
            let k = fg.len() as f64;
            (s_fg / k, s_bg / k)
        }
        NormalizeMode::Global => (s_fg, s_bg),
    }
}

/// `|1 - s_fg| + |0 - s_bg|`, or `None` when Fg or Bg is empty.
pub fn affinity_loss(a: &Array2<f64>, fg: &[usize], bg: &[usize], mode: NormalizeMode) -> Option<f64> {
    if fg.is_empty() || bg.is_empty() {
        return None;
    }
    let (s_fg, s_bg) = affinity_sums(a, fg, bg, mode);
    Some((1.0 - s_fg).abs() + s_bg.abs())
}

/// Loss and gradient with respect to the normalized affinity.
pub fn affinity_loss_grad(
    a: &Array2<f64>,
    fg: &[usize],
    bg: &[usize],
    mode: NormalizeMode,
) -> Option<(f64, Array2<f64>)> {
    let loss = affinity_loss(a, fg, bg, mode)?;
    let (s_fg, s_bg) = affinity_sums(a, fg, bg, mode);
    let norm = match mode {
        NormalizeMode::Row => fg.len() as f64,
        NormalizeMode::Global => 1.0,
    };
    let g_fg = -sign(1.0 - s_fg) / norm;
    let g_bg = sign(s_bg) / norm;
    let mut grad = Array2::zeros(a.dim());
    for &i in fg {
        for &m in fg {
            grad[[i, m]] = g_fg;
        }
        for &m in bg {
            grad[[i, m]] = g_bg;
        }
    }
    Some((loss, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combine per-RoI losses: each term is averaged over the RoIs that
/// evaluated it, then weighted. Unsupervised RoIs contribute nothing.
pub fn total_loss(rois: &[RoiLoss], weights: &LossWeights) -> LossReport {
    let mean = |pick: fn(&RoiLoss) -> Option<f64>| -> (f64, usize) {
        let vals: Vec<f64> = rois.iter().filter(|r| r.supervised).filter_map(pick).collect();
        if vals.is_empty() {
            (0.0, 0)
        } else {
            (vals.iter().sum::<f64>() / vals.len() as f64, vals.len())
        }
    };
    let (boundary, _) = mean(|r| r.boundary);
    let (affinity, n_aff) = mean(|r| r.affinity);
    let (segment, _) = mean(|r| r.segment);
    let n_supervised = rois.iter().filter(|r| r.supervised).count();
    if n_supervised == 0 {
        log::debug!("no supervised RoIs in batch; total loss is 0");
    }
    LossReport {
        boundary,
        affinity,
        segment,
        total: weights.boundary * boundary + weights.affinity * affinity + weights.segment * segment,
        n_rois_affinity: n_aff,
        n_rois_supervised: n_supervised,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::normalize_affinity;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook BCE on probabilities, for comparison.
    fn bce_reference(logits: &Array2<f64>, target: &Array2<f64>) -> f64 {
        logits
            .iter()
            .zip(target.iter())
            .map(|(&l, &t)| {
                let p = 1.0 / (1.0 + (-l).exp());
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / logits.len() as f64
    }

    #[test]
    fn zero_logits_give_ln2() {
        let logits = Array2::zeros((4, 4));
        let target = Array2::from_shape_fn((4, 4), |(r, c)| ((r + c) % 2) as f64);
        let b = BoundaryTarget { grid: target.mapv(|v| v > 0.5) };
        assert!((boundary_loss(&logits, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((segment_loss(&logits, &target).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn closed_form_two_pixel_bce() {
        let logits = array![[2.0, -2.0]];
        let b = BoundaryTarget { grid: array![[true, false]] };
        let expected = softplus(-2.0);
        assert!((expected - 0.126_928_011_042_972_5).abs() < 1e-12);
        assert!((boundary_loss(&logits, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_limit() {
        let target = array![[1.0, 0.0], [0.0, 1.0]];
        let logits = target.mapv(|t: f64| if t > 0.5 { 60.0 } else { -60.0 });
        assert!(segment_loss(&logits, &target).unwrap() < 1e-20);
    }

    #[test]
    fn half_target_closed_form() {
        let logits = array![[0.3, -1.7], [2.2, 0.0]];
        let target = Array2::from_elem((2, 2), 0.5);
        let expected = logits.iter().map(|&l| (softplus(l) + softplus(-l)) / 2.0).sum::<f64>() / 4.0;
        assert!((segment_loss(&logits, &target).unwrap() - expected).abs() < 1e-12);
        assert!((segment_loss(&logits, &target).unwrap() - bce_reference(&logits, &target)).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_shape_mismatch() {
        assert!(segment_loss(&Array2::zeros((2, 2)), &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn affinity_examples() {
        // Every pixel foreground: no background, term skipped; with one bg
        // column the row sums split as expected.
        let a = array![[0.9, 0.1], [0.4, 0.6]];
        let loss = affinity_loss(&a, &[0], &[1], NormalizeMode::Row).unwrap();
        assert!((loss - 0.2).abs() < 1e-12);
        assert!(affinity_loss(&a, &[0, 1], &[], NormalizeMode::Row).is_none());
        assert!(affinity_loss(&a, &[], &[0, 1], NormalizeMode::Row).is_none());
        let uniform = Array2::from_elem((3, 3), 1.0 / 3.0);
        let (s_fg, _) = affinity_sums(&uniform, &[0, 1, 2], &[], NormalizeMode::Row);
        assert!((s_fg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn row_mode_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.gen_range(2..30);
            let raw = Array2::from_shape_simple_fn((n, n), || rng.gen_range(-4.0..4.0));
            let a = normalize_affinity(&raw, NormalizeMode::Row);
            let (fg, bg): (Vec<usize>, Vec<usize>) = (0..n).partition(|_| rng.gen_bool(0.5));
            let Some(loss) = affinity_loss(&a, &fg, &bg, NormalizeMode::Row) else {
                continue;
            };
            let (s_fg, _) = affinity_sums(&a, &fg, &bg, NormalizeMode::Row);
            assert!((loss - 2.0 * (1.0 - s_fg).abs()).abs() < 1e-9);
            assert!((0.0..=2.0).contains(&loss));
        }
    }

    #[test]
    fn total_combines_weighted_means() {
        let r = RoiLoss {
            boundary: Some(0.2),
            affinity: Some(0.4),
            segment: Some(0.1),
            supervised: true,
        };
        let report = total_loss(&[r], &LossWeights::default());
        assert!((report.total - 0.4).abs() < 1e-12);

        let baseline = LossWeights {
            boundary: 0.0,
            affinity: 0.0,
            ..Default::default()
        };
        assert!((total_loss(&[r], &baseline).total - 0.1).abs() < 1e-12);

        let novel = RoiLoss {
            supervised: false,
            ..r
        };
        let report = total_loss(&[novel, novel], &LossWeights::default());
        assert_eq!(report.total, 0.0);
        assert_eq!(report.n_rois_affinity, 0);
    }

    #[test]
    fn total_is_linear_in_each_term() {
        let w = LossWeights::default();
        let at = |seg: f64| {
            total_loss(
                &[RoiLoss {
                    boundary: Some(0.3),
                    affinity: Some(0.7),
                    segment: Some(seg),
                    supervised: true,
                }],
                &w,
            )
            .total
        };
        assert!(((at(1.0) - at(0.0)) - w.segment).abs() < 1e-12);
        assert!(((at(2.0) - at(1.0)) - w.segment).abs() < 1e-12);
    }

    #[test]
    fn skipped_affinity_rois_do_not_dilute_the_mean() {
        let a = RoiLoss {
            boundary: Some(0.0),
            affinity: Some(0.6),
            segment: Some(0.0),
            supervised: true,
        };
        let b = RoiLoss { affinity: None, ..a };
        let report = total_loss(&[a, b], &LossWeights::default());
        assert!((report.affinity - 0.6).abs() < 1e-12);
        assert_eq!(report.n_rois_affinity, 1);
        assert_eq!(report.n_rois_supervised, 2);
    }
}

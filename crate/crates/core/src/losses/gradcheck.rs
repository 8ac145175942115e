use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::ModelParams;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Relative tolerance a resolvable coordinate must meet.
pub const GRADCHECK_TOL: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;
/// Safety factor on the rounding error of one objective evaluation.
const ROUNDING_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Max relative error over resolvable coordinates.
    pub max_rel_error: f64,
    /// Max relative error over every checked coordinate, resolvable or not.
    pub strict_max_rel_error: f64,
    /// `tensor[index]` of the worst resolvable coordinate.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Checked coordinates whose gradient is too small for the difference
    /// quotient to resolve at `GRADCHECK_TOL`; these are held to the
    /// absolute rounding bound instead.
    pub below_resolution: usize,
    /// Below-resolution coordinates whose disagreement exceeds the rounding
    /// bound.
    pub resolution_violations: usize,
    /// Sampled coordinates whose stencil crossed a ReLU boundary.
    pub skipped_nonsmooth: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= GRADCHECK_TOL && self.resolution_violations == 0
    }
}

/// Reports the on/off pattern of every piecewise-linear unit at a point.
pub type SmoothnessProbe<'a> = &'a dyn Fn(&ModelParams) -> Result<Vec<bool>>;

/// Compare the analytic gradient of `objective` with central differences
/// on up to `max_coords` randomly chosen coordinates whose tensor name
/// passes `filter`.
///
/// `objective(params, grads)` returns the loss and, when `grads` is given,
/// accumulates the analytic gradient into it. With a `probe`, coordinates
/// whose `+-h` stencil changes the activation pattern are not
/// differentiable there; they are skipped and the next sampled coordinate
/// is used instead.
///
/// The difference quotient carries a rounding error of about
/// `eps * |f| / h`. A coordinate whose gradient magnitude is below
/// `bound / GRADCHECK_TOL` cannot show a relative error under the
/// tolerance even when exact, so it is checked against the absolute bound.
pub fn gradient_check<F>(
    params: &ModelParams,
    objective: F,
    filter: impl Fn(&str) -> bool,
    probe: Option<SmoothnessProbe>,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams, Option<&mut ModelParams>) -> Result<f64>,
{
    let mut analytic = params.zeros_like();
    objective(params, Some(&mut analytic))?;
    for (name, _, values) in analytic.tensors() {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }

    // Flat (tensor, index) candidates in canonical tensor order.
    let mut candidates = Vec::new();
    for (t, (name, _, values)) in params.tensors().into_iter().enumerate() {
        if filter(&name) {
            candidates.extend((0..values.len()).map(|i| (t, i)));
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("gradient check selected no parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Oversample so skipped coordinates can be replaced.
    let picked = sample(&mut rng, candidates.len(), (4 * max_coords).min(candidates.len()));
    let base_pattern = probe.map(|p| p(params)).transpose()?;

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic_values: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect();
    let originals: Vec<Vec<f64>> = params.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        strict_max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        below_resolution: 0,
        resolution_violations: 0,
        skipped_nonsmooth: 0,
    };
    let mut work = params.clone();
    for k in picked.into_iter() {
        if report.checked == max_coords {
            break;
        }
        let (t, i) = candidates[k];
        let orig = originals[t][i];
        let plus = set_coord(&mut work, t, i, orig + GRADCHECK_STEP).clone();
        let minus = set_coord(&mut work, t, i, orig - GRADCHECK_STEP).clone();
        set_coord(&mut work, t, i, orig);
        if let (Some(probe), Some(base)) = (probe, &base_pattern) {
            if probe(&plus)? != *base || probe(&minus)? != *base {
                report.skipped_nonsmooth += 1;
                continue;
            }
        }
        let f_plus = objective(&plus, None)?;
        let f_minus = objective(&minus, None)?;
        let numeric = (f_plus - f_minus) / (2.0 * GRADCHECK_STEP);
        let a = analytic_values[t][i];
        let diff = (a - numeric).abs();
        let rel = diff / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if !rel.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{}[{i}]", names[t])));
        }
        report.checked += 1;
        report.strict_max_rel_error = report.strict_max_rel_error.max(rel);

        let rounding = ROUNDING_FACTOR * f64::EPSILON * (f_plus.abs() + f_minus.abs()) / (2.0 * GRADCHECK_STEP);
        if (a != 0.0 || numeric != 0.0) && a.abs().max(numeric.abs()) * GRADCHECK_TOL < rounding {
            report.below_resolution += 1;
            if diff > rounding {
                report.resolution_violations += 1;
            }
            continue;
        }
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{}[{i}]", names[t]);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn set_coord(p: &mut ModelParams, tensor: usize, index: usize, value: f64) -> &ModelParams {
    let mut t = 0;
    p.for_each_mut(|_, values| {
        if t == tensor {
            values[index] = value;
        }
        t += 1;
    });
    p
}

//! Mask branch for one RoI: boundary parsing, boundary-guided fusion,
//! basic mask head, supervised non-local affinity, and the final predictor.

use ndarray::{Array1, Array2, Array3, Axis};

use super::layers::{
    as_matrix, avg_pool2, avg_pool2_backward, relu_backward_inplace, relu_inplace, sigmoid, upsample2,
    upsample2_backward, Conv,
};
use super::params::{ModelParams, NormalizeMode, ZSCORE_EPS};
use crate::error::{Error, Result};

/// Outputs of the mask branch for one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiForward {
    /// Cropped RoI feature, `(c, h, w)`.
    pub x: Array3<f64>,
    /// `(2h, 2w)`; `None` when the boundary module is disabled.
    pub boundary_logits: Option<Array2<f64>>,
    /// Sigmoid of the boundary logits pooled back to `(h, w)`.
    pub boundary_prob_lowres: Option<Array2<f64>>,
    /// Basic mask head output, `(c, h, w)`.
    pub c: Array3<f64>,
    /// Normalized affinity, `(hw, hw)`; `None` when the affinity module is disabled.
    pub affinity: Option<Array2<f64>>,
    /// Attended features, `(c, h, w)`.
    pub c_tilde: Option<Array3<f64>>,
    /// `(2h, 2w)`.
    pub mask_logits: Array2<f64>,
}

/// Per-pixel z-score of an embedding matrix `(d, n)` over its `d` rows.
#[derive(Debug, Clone)]
pub struct ZScore {
    pub normalized: Array2<f64>,
    centered: Array2<f64>,
    sigma: Array1<f64>,
}

impl ZScore {
    pub fn new(m: &Array2<f64>) -> Self {
        let d = m.nrows() as f64;
        let mean = m.mean_axis(Axis(0)).expect("non-empty embedding");
        let centered = m - &mean.view().insert_axis(Axis(0));
        let sigma = centered.map_axis(Axis(0), |col| (col.iter().map(|v| v * v).sum::<f64>() / d).sqrt());
        let normalized = &centered / &sigma.mapv(|s| s + ZSCORE_EPS).view().insert_axis(Axis(0));
        Self {
            normalized,
            centered,
            sigma,
        }
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.nrows() as f64;
        let mut dx = Array2::zeros(dy.dim());
        for (i, mut out) in dx.axis_iter_mut(Axis(1)).enumerate() {
            let g = dy.column(i);
            let xc = self.centered.column(i);
            let sigma = self.sigma[i];
            let s = sigma + ZSCORE_EPS;
            let gmean = g.mean().expect("non-empty");
            let gx: f64 = g.iter().zip(xc.iter()).map(|(a, b)| a * b).sum();
            let coupling = if sigma > 0.0 { gx / (s * s * d * sigma) } else { 0.0 };
            for ((o, &gj), &xj) in out.iter_mut().zip(g.iter()).zip(xc.iter()) {
                *o = (gj - gmean) / s - xj * coupling;
            }
        }
        dx
    }
}

/// Normalize raw affinity logits.
pub fn normalize_affinity(raw: &Array2<f64>, mode: NormalizeMode) -> Array2<f64> {
    match mode {
        NormalizeMode::Row => {
            let mut out = raw.clone();
            for mut row in out.axis_iter_mut(Axis(0)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            out
        }
        NormalizeMode::Global => {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut out = raw.mapv(|v| (v - max).exp());
            let sum = out.sum();
            out /= sum;
            out
        }
    }
}

/// Gradient of the softmax input given the normalized output `a` and `da`.
pub fn normalize_affinity_backward(a: &Array2<f64>, da: &Array2<f64>, mode: NormalizeMode) -> Array2<f64> {
    match mode {
        NormalizeMode::Row => {
            let mut out = Array2::zeros(a.dim());
            for ((mut o, ar), dr) in out.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))).zip(da.axis_iter(Axis(0))) {
                let dot: f64 = ar.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                for ((o, &x), &y) in o.iter_mut().zip(ar.iter()).zip(dr.iter()) {
                    *o = x * (y - dot);
                }
            }
            out
        }
        NormalizeMode::Global => {
            let dot: f64 = (a * da).sum();
            a * &(da - dot)
        }
    }
}

#[derive(Debug, Clone)]
struct ConvStackCache {
    cols: Vec<Array2<f64>>,
    acts: Vec<Array3<f64>>,
}

fn conv_stack_forward(convs: &[Conv], x: &Array3<f64>) -> (Array3<f64>, ConvStackCache) {
    let mut cols = Vec::with_capacity(convs.len());
    let mut acts: Vec<Array3<f64>> = Vec::with_capacity(convs.len());
    for conv in convs {
        let input = acts.last().unwrap_or(x);
        let (mut y, col) = conv.forward(input);
        relu_inplace(&mut y);
        cols.push(col);
        acts.push(y);
    }
    (acts.last().expect("non-empty stack").clone(), ConvStackCache { cols, acts })
}

fn conv_stack_backward(convs: &[Conv], cache: &ConvStackCache, dout: Array3<f64>, grads: &mut [Conv]) -> Array3<f64> {
    let mut d = dout;
    for i in (0..convs.len()).rev() {
        relu_backward_inplace(&mut d, &cache.acts[i]);
        d = convs[i].backward(&cache.cols[i], &d, &mut grads[i]);
    }
    d
}

/// 1x1 conv to one channel followed by x2 bilinear upsampling. Both maps
/// are linear and the upsampling weights sum to one, so this equals
/// upsampling first and convolving second.
fn predict_upsampled(conv: &Conv, features: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let t = conv.apply_matrix(features.view());
    let t = t.into_shape_with_order((h, w)).expect("single-channel map");
    upsample2(&t)
}

fn predict_upsampled_backward(conv: &Conv, features: &Array2<f64>, dlogits: &Array2<f64>, grad: &mut Conv) -> Array2<f64> {
    let dt = upsample2_backward(dlogits);
    let n = dt.len();
    let dt = dt.into_shape_with_order((1, n)).expect("row vector");
    conv.backward_matrix(features.view(), dt.view(), grad)
}

#[derive(Debug, Clone)]
struct BoundaryCache {
    stack: ConvStackCache,
    features: Array2<f64>,
    prob: Array2<f64>,
    lowres: Array2<f64>,
}

#[derive(Debug, Clone)]
struct AffinityCache {
    theta: ZScore,
    phi: ZScore,
    g_out: Array2<f64>,
}

/// Everything the backward pass of one RoI needs.
#[derive(Debug, Clone)]
pub struct RoiCache {
    boundary: Option<BoundaryCache>,
    head: ConvStackCache,
    affinity: Option<AffinityCache>,
    /// Predictor input `(c, hw)`.
    z: Array2<f64>,
}

impl RoiCache {
    /// Append the on/off state of every ReLU unit in the mask branch.
    pub(crate) fn push_relu_pattern(&self, out: &mut Vec<bool>) {
        let stacks = self.boundary.iter().map(|b| &b.stack).chain(std::iter::once(&self.head));
        for stack in stacks {
            for a in &stack.acts {
                out.extend(a.iter().map(|&v| v > 0.0));
            }
        }
    }
}

/// Upstream gradients into one RoI's outputs.
#[derive(Debug, Clone, Default)]
pub struct RoiOutputGrads {
    pub mask_logits: Option<Array2<f64>>,
    pub boundary_logits: Option<Array2<f64>>,
    pub affinity: Option<Array2<f64>>,
}

impl ModelParams {
    fn boundary_params(&self) -> Result<&super::params::BoundaryParams> {
        self.boundary
            .as_ref()
            .ok_or_else(|| Error::Config("boundary module is disabled".into()))
    }

    fn affinity_params(&self) -> Result<&super::params::AffinityParams> {
        self.affinity
            .as_ref()
            .ok_or_else(|| Error::Config("affinity module is disabled".into()))
    }

    /// Boundary logits at twice the RoI resolution, and their sigmoid
    /// average-pooled back to the RoI grid.
    pub fn boundary_forward(&self, x: &Array3<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let bp = self.boundary_params()?;
        let (_, h, w) = x.dim();
        let (feat, _) = conv_stack_forward(&bp.convs, x);
        let logits = predict_upsampled(&bp.out, &as_matrix(&feat).to_owned(), h, w);
        let lowres = lowres_prob(&logits);
        Ok((logits, lowres))
    }

    /// `C = G(X + alpha * p)` with `p` broadcast over channels; `p = None`
    /// skips the fusion.
    pub fn fuse_and_head(&self, x: &Array3<f64>, boundary_prob_lowres: Option<&Array2<f64>>) -> Result<Array3<f64>> {
        let fused = self.fuse(x, boundary_prob_lowres)?;
        Ok(conv_stack_forward(&self.mask_head, &fused).0)
    }

    fn fuse(&self, x: &Array3<f64>, p: Option<&Array2<f64>>) -> Result<Array3<f64>> {
        let Some(p) = p else {
            return Ok(x.clone());
        };
        let (_, h, w) = x.dim();
        if p.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "boundary probability {:?} vs RoI grid {h}x{w}",
                p.dim()
            )));
        }
        let alpha = self.boundary.as_ref().map_or(0.0, |b| b.alpha[0]);
        Ok(x + &(p * alpha).insert_axis(Axis(0)))
    }

    /// Z-scored `theta` and `phi` embeddings of `C`, each `(c / 2, hw)`.
    pub fn affinity_embeddings(&self, c: &Array3<f64>) -> Result<(ZScore, ZScore)> {
        let ap = self.affinity_params()?;
        let cm = as_matrix(c);
        Ok((
            ZScore::new(&ap.theta.apply_matrix(cm)),
            ZScore::new(&ap.phi.apply_matrix(cm)),
        ))
    }

    /// Normalized pairwise affinity between every pair of RoI pixels.
    pub fn compute_affinity(&self, c: &Array3<f64>) -> Result<Array2<f64>> {
        let (u, v) = self.affinity_embeddings(c)?;
        let raw = u.normalized.t().dot(&v.normalized);
        Ok(normalize_affinity(&raw, self.arch.normalize_mode))
    }

    /// `C~_i = sum_m A[i, m] g(C_m)`.
    pub fn nonlocal_attention(&self, a: &Array2<f64>, c: &Array3<f64>) -> Result<Array3<f64>> {
        let ap = self.affinity_params()?;
        let (ch, h, w) = c.dim();
        if a.dim() != (h * w, h * w) {
            return Err(Error::ShapeMismatch(format!("affinity {:?} vs grid {h}x{w}", a.dim())));
        }
        let g_out = ap.g.apply_matrix(as_matrix(c));
        Ok(g_out.dot(&a.t()).into_shape_with_order((ch, h, w)).expect("attention shape"))
    }

    /// Mask logits from `C~ + C` (or `C` alone when attention is absent).
    pub fn mask_forward(&self, c_tilde: Option<&Array3<f64>>, c: &Array3<f64>) -> Result<Array2<f64>> {
        let (_, h, w) = c.dim();
        let z = match c_tilde {
            Some(t) if t.dim() != c.dim() => {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", t.dim(), c.dim())));
            }
            Some(t) => as_matrix(t).to_owned() + as_matrix(c),
            None => as_matrix(c).to_owned(),
        };
        Ok(predict_upsampled(&self.predictor, &z, h, w))
    }

    /// Whole mask branch on one RoI feature.
    pub fn roi_forward(&self, x: &Array3<f64>) -> Result<RoiForward> {
        Ok(self.roi_forward_cached(x)?.0)
    }

    pub fn roi_forward_cached(&self, x: &Array3<f64>) -> Result<(RoiForward, RoiCache)> {
        let (ch, h, w) = x.dim();
        if ch != self.arch.channels {
            return Err(Error::ShapeMismatch(format!(
                "RoI feature has {ch} channels, model expects {}",
                self.arch.channels
            )));
        }
        let n = h * w;

        let boundary = match &self.boundary {
            Some(bp) => {
                let (feat, stack) = conv_stack_forward(&bp.convs, x);
                let features = as_matrix(&feat).to_owned();
                let logits = predict_upsampled(&bp.out, &features, h, w);
                let prob = logits.mapv(sigmoid);
                let lowres = pool_plane(&prob);
                Some((
                    logits,
                    BoundaryCache {
                        stack,
                        features,
                        prob,
                        lowres,
                    },
                ))
            }
            None => None,
        };
        let fused = self.fuse(x, boundary.as_ref().map(|(_, bc)| &bc.lowres))?;
        let (c, head) = conv_stack_forward(&self.mask_head, &fused);
        let cm = as_matrix(&c).to_owned();

        let (affinity, c_tilde, affinity_cache, z) = match &self.affinity {
            Some(ap) => {
                let theta = ZScore::new(&ap.theta.apply_matrix(cm.view()));
                let phi = ZScore::new(&ap.phi.apply_matrix(cm.view()));
                let raw = theta.normalized.t().dot(&phi.normalized);
                let a = normalize_affinity(&raw, self.arch.normalize_mode);
                let g_out = ap.g.apply_matrix(cm.view());
                let attended = g_out.dot(&a.t());
                let z = &attended + &cm;
                let c_tilde = attended.into_shape_with_order((ch, h, w)).expect("attention shape");
                (Some(a), Some(c_tilde), Some(AffinityCache { theta, phi, g_out }), z)
            }
            None => (None, None, None, cm),
        };
        debug_assert_eq!(z.ncols(), n);
        let mask_logits = predict_upsampled(&self.predictor, &z, h, w);

        let (boundary_logits, boundary_prob_lowres, boundary_cache) = match boundary {
            Some((logits, bc)) => (Some(logits), Some(bc.lowres.clone()), Some(bc)),
            None => (None, None, None),
        };
        Ok((
            RoiForward {
                x: x.clone(),
                boundary_logits,
                boundary_prob_lowres,
                c,
                affinity,
                c_tilde,
                mask_logits,
            },
            RoiCache {
                boundary: boundary_cache,
                head,
                affinity: affinity_cache,
                z,
            },
        ))
    }

    /// Accumulate parameter gradients for one RoI and return the gradient
    /// with respect to its input feature `x`.
    pub fn roi_backward(
        &self,
        fwd: &RoiForward,
        cache: &RoiCache,
        upstream: &RoiOutputGrads,
        grads: &mut ModelParams,
    ) -> Array3<f64> {
        let (ch, h, w) = fwd.c.dim();
        let n = h * w;

        let dz = match &upstream.mask_logits {
            Some(d) => predict_upsampled_backward(&self.predictor, &cache.z, d, &mut grads.predictor),
            None => Array2::zeros((ch, n)),
        };

        // Z = C~ + C: both summands receive dz.
        let mut dcm = dz.clone();
        if let (Some(ap), Some(ac), Some(a)) = (&self.affinity, &cache.affinity, &fwd.affinity) {
            let gp = grads.affinity.as_mut().expect("gradient buffer mirrors params");
            let cm = as_matrix(&fwd.c);
            // Attention: C~ = G A^T.
            let dg_out = dz.dot(a);
            let mut da = dz.t().dot(&ac.g_out);
            if let Some(extra) = &upstream.affinity {
                da += extra;
            }
            dcm += &ap.g.backward_matrix(cm, dg_out.view(), &mut gp.g);
            let draw = normalize_affinity_backward(a, &da, self.arch.normalize_mode);
            // raw = U^T V.
            let du = ac.phi.normalized.dot(&draw.t());
            let dv = ac.theta.normalized.dot(&draw);
            let dtheta = ac.theta.backward(&du);
            let dphi = ac.phi.backward(&dv);
            dcm += &ap.theta.backward_matrix(cm, dtheta.view(), &mut gp.theta);
            dcm += &ap.phi.backward_matrix(cm, dphi.view(), &mut gp.phi);
        }
        let dc = dcm.into_shape_with_order((ch, h, w)).expect("head gradient shape");
        let dfused = conv_stack_backward(&self.mask_head, &cache.head, dc, &mut grads.mask_head);

        let mut dx = dfused.clone();
        if let (Some(bp), Some(bc)) = (&self.boundary, &cache.boundary) {
            let gb = grads.boundary.as_mut().expect("gradient buffer mirrors params");
            let alpha = bp.alpha[0];
            let dsum = dfused.sum_axis(Axis(0));
            gb.alpha[0] += (&dsum * &bc.lowres).sum();
            let dlow = dsum * alpha;
            let dprob = avg_pool2_backward(&dlow.insert_axis(Axis(0)), 2 * h, 2 * w)
                .index_axis_move(Axis(0), 0);
            let mut dlogits = dprob * &bc.prob.mapv(|p| p * (1.0 - p));
            if let Some(extra) = &upstream.boundary_logits {
                dlogits += extra;
            }
            let dfeat = predict_upsampled_backward(&bp.out, &bc.features, &dlogits, &mut gb.out);
            let dfeat = dfeat.into_shape_with_order((ch, h, w)).expect("boundary gradient shape");
            dx += &conv_stack_backward(&bp.convs, &bc.stack, dfeat, &mut gb.convs);
        }
        dx
    }
}

fn pool_plane(prob: &Array2<f64>) -> Array2<f64> {
    avg_pool2(&prob.clone().insert_axis(Axis(0))).index_axis_move(Axis(0), 0)
}

fn lowres_prob(logits: &Array2<f64>) -> Array2<f64> {
    pool_plane(&logits.mapv(sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::Architecture;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(mode: NormalizeMode) -> ModelParams {
        let arch = Architecture {
            channels: 8,
            roi_size: 7,
            mask_size: 14,
            normalize_mode: mode,
            ..Default::default()
        };
        ModelParams::init(arch, 3).unwrap()
    }

    fn assert_close(a: &Array3<f64>, b: &Array3<f64>) {
        assert_eq!(a.dim(), b.dim());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.gen_range(0.0..1.0))
    }

    #[test]
    fn output_shapes() {
        for mode in [NormalizeMode::Row, NormalizeMode::Global] {
            let p = small(mode);
            let f = p.roi_forward(&random((8, 7, 7), 1)).unwrap();
            assert_eq!(f.boundary_logits.as_ref().unwrap().dim(), (14, 14));
            assert_eq!(f.boundary_prob_lowres.as_ref().unwrap().dim(), (7, 7));
            assert_eq!(f.c.dim(), (8, 7, 7));
            assert_eq!(f.affinity.as_ref().unwrap().dim(), (49, 49));
            assert_eq!(f.c_tilde.as_ref().unwrap().dim(), (8, 7, 7));
            assert_eq!(f.mask_logits.dim(), (14, 14));
        }
        let mut arch = small(NormalizeMode::Row).arch;
        arch.use_boundary = false;
        arch.use_affinity = false;
        let f = ModelParams::init(arch, 1).unwrap().roi_forward(&random((8, 7, 7), 1)).unwrap();
        assert!(f.boundary_logits.is_none() && f.affinity.is_none() && f.c_tilde.is_none());
        assert_eq!(f.mask_logits.dim(), (14, 14));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        assert!(small(NormalizeMode::Row).roi_forward(&random((5, 7, 7), 1)).is_err());
    }

    #[test]
    fn fusion_examples() {
        let mut p = small(NormalizeMode::Row);
        let x = random((8, 7, 7), 2);
        let prob = random((1, 7, 7), 3).index_axis_move(Axis(0), 0);
        let plain = p.fuse_and_head(&x, None).unwrap();

        p.boundary.as_mut().unwrap().alpha[0] = 0.0;
        assert_close(&p.fuse_and_head(&x, Some(&prob)).unwrap(), &plain);

        p.boundary.as_mut().unwrap().alpha[0] = 1.0;
        let half = Array2::from_elem((7, 7), 0.5);
        let shifted = p.fuse_and_head(&(&x + 0.5), None).unwrap();
        assert_close(&p.fuse_and_head(&x, Some(&half)).unwrap(), &shifted);
    }

    #[test]
    fn single_pixel_affinity_is_one() {
        for mode in [NormalizeMode::Row, NormalizeMode::Global] {
            let a = small(mode).compute_affinity(&random((8, 1, 1), 4)).unwrap();
            assert_eq!(a.dim(), (1, 1));
            assert_abs_diff_eq!(a[[0, 0]], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_features_give_uniform_affinity() {
        let c = Array3::from_shape_fn((8, 3, 3), |(k, _, _)| k as f64 * 0.3 - 1.0);
        let a = small(NormalizeMode::Row).compute_affinity(&c).unwrap();
        assert!(a.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-12));
        let a = small(NormalizeMode::Global).compute_affinity(&c).unwrap();
        assert!(a.iter().all(|&v| (v - 1.0 / 81.0).abs() < 1e-12));
    }

    #[test]
    fn affinity_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [NormalizeMode::Row, NormalizeMode::Global] {
            let p = small(mode);
            let c = random((8, 3, 3), 6);
            let mut perm: Vec<usize> = (0..9).collect();
            for i in (1..9).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            // Pixel i of the permuted map is pixel perm[i] of the original.
            let cp = Array3::from_shape_fn((8, 3, 3), |(k, y, x)| {
                let j = perm[y * 3 + x];
                c[[k, j / 3, j % 3]]
            });
            let a = p.compute_affinity(&c).unwrap();
            let ap = p.compute_affinity(&cp).unwrap();
            for i in 0..9 {
                for m in 0..9 {
                    assert_abs_diff_eq!(ap[[i, m]], a[[perm[i], perm[m]]], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zscore_statistics() {
        let p = small(NormalizeMode::Row);
        let (u, v) = p.affinity_embeddings(&random((8, 7, 7), 7)).unwrap();
        for z in [&u, &v] {
            for (i, col) in z.normalized.axis_iter(Axis(1)).enumerate() {
                if z.sigma[i] <= 10.0 * ZSCORE_EPS {
                    continue;
                }
                let sigma = z.sigma[i];
                let mean = col.mean().unwrap();
                let sd = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64).sqrt();
                assert!(mean.abs() <= 1e-6);
                // The epsilon in the denominator shrinks the std to sigma / (sigma + eps).
                assert!((sd - sigma / (sigma + ZSCORE_EPS)).abs() <= 1e-12);
                if sigma >= ZSCORE_EPS / 1e-4 {
                    assert!((sd - 1.0).abs() <= 1e-4, "std {sd}");
                }
            }
        }
    }

    #[test]
    fn attention_examples() {
        let p = small(NormalizeMode::Row);
        let ap = p.affinity.as_ref().unwrap();
        let c = random((8, 3, 3), 8);
        let g = ap.g.apply_matrix(as_matrix(&c)).into_shape_with_order((8, 3, 3)).unwrap();

        let identity = Array2::eye(9);
        assert_close(&p.nonlocal_attention(&identity, &c).unwrap(), &g);

        let uniform = Array2::from_elem((9, 9), 1.0 / 9.0);
        let out = p.nonlocal_attention(&uniform, &c).unwrap();
        for k in 0..8 {
            let mean = g.index_axis(Axis(0), k).mean().unwrap();
            assert!(out.index_axis(Axis(0), k).iter().all(|&v| (v - mean).abs() < 1e-12));
        }
        assert!(p.nonlocal_attention(&Array2::eye(4), &c).is_err());
    }

    #[test]
    fn predictor_examples() {
        let mut p = small(NormalizeMode::Row);
        let c = random((8, 7, 7), 9);
        let b = p.predictor.bias[0];
        let cancelled = p.mask_forward(Some(&(-&c)), &c).unwrap();
        assert!(cancelled.iter().all(|&v| (v - b).abs() < 1e-12));

        p.predictor.weight.fill(0.0);
        let logits = p.mask_forward(None, &c).unwrap();
        assert!(logits.iter().all(|&v| (sigmoid(v) - sigmoid(b)).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn softmax_sums(seed in 0u64..1000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_simple_fn((n, n), || rng.gen_range(-30.0..30.0));
            let a = normalize_affinity(&raw, NormalizeMode::Row);
            for row in a.axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            }
            let g = normalize_affinity(&raw, NormalizeMode::Global);
            prop_assert!((g.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(g.iter().chain(a.iter()).all(|&v| v >= 0.0));
        }
    }
}

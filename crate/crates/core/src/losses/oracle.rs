//! Loop-based reference implementations of the affinity and attention
//! computations, used to cross-check the vectorized forward pass.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::net::layers::Conv;
use crate::net::{AffinityParams, NormalizeMode, ZSCORE_EPS};

/// Largest grid side the oracle accepts; it is quartic in the side length.
pub const ORACLE_MAX_SIDE: usize = 8;

fn check_grid(c: &Array3<f64>) -> Result<()> {
    let (_, h, w) = c.dim();
    if h > ORACLE_MAX_SIDE || w > ORACLE_MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "oracle grid {h}x{w} exceeds {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}"
        )));
    }
    Ok(())
}

fn pointwise(conv: &Conv, c: &Array3<f64>, y: usize, x: usize) -> Vec<f64> {
    (0..conv.weight.nrows())
        .map(|o| {
            let mut acc = conv.bias[o];
            for k in 0..c.dim().0 {
                acc += conv.weight[[o, k]] * c[[k, y, x]];
            }
            acc
        })
        .collect()
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    let sd = var.sqrt() + ZSCORE_EPS;
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Normalized affinity of an RoI feature `(c, h, w)` with explicit loops.
pub fn brute_force_affinity(ap: &AffinityParams, c: &Array3<f64>, mode: NormalizeMode) -> Result<Array2<f64>> {
    check_grid(c)?;
    let (_, h, w) = c.dim();
    let n = h * w;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            u.push(zscore(&pointwise(&ap.theta, c, y, x)));
            v.push(zscore(&pointwise(&ap.phi, c, y, x)));
        }
    }
    let mut raw = Array2::zeros((n, n));
    for i in 0..n {
        for m in 0..n {
            raw[[i, m]] = u[i].iter().zip(&v[m]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut a = Array2::zeros((n, n));
    match mode {
        NormalizeMode::Row => {
            for i in 0..n {
                let mx = (0..n).map(|m| raw[[i, m]]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n).map(|m| (raw[[i, m]] - mx).exp()).sum();
                for m in 0..n {
                    a[[i, m]] = (raw[[i, m]] - mx).exp() / z;
                }
            }
        }
        NormalizeMode::Global => {
            let mx = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = raw.iter().map(|r| (r - mx).exp()).sum();
            for i in 0..n {
                for m in 0..n {
                    a[[i, m]] = (raw[[i, m]] - mx).exp() / z;
                }
            }
        }
    }
    Ok(a)
}

/// `C~[k, i] = sum_m A[i, m] * g(C)[k, m]` with explicit loops.
pub fn brute_force_attention(ap: &AffinityParams, a: &Array2<f64>, c: &Array3<f64>) -> Result<Array3<f64>> {
    check_grid(c)?;
    let (ch, h, w) = c.dim();
    let n = h * w;
    if a.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!("affinity {:?} vs grid {h}x{w}", a.dim())));
    }
    let g: Vec<Vec<f64>> = (0..n).map(|m| pointwise(&ap.g, c, m / w, m % w)).collect();
    let mut out = Array3::zeros((ch, h, w));
    for i in 0..n {
        for k in 0..ch {
            out[[k, i / w, i % w]] = (0..n).map(|m| a[[i, m]] * g[m][k]).sum::<f64>();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vectorized_affinity_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mode in [NormalizeMode::Row, NormalizeMode::Global] {
            let arch = Architecture {
                channels: 8,
                roi_size: 4,
                mask_size: 8,
                normalize_mode: mode,
                ..Default::default()
            };
            let p = ModelParams::init(arch, 2).unwrap();
            let ap = p.affinity.as_ref().unwrap();
            for side in 1..=ORACLE_MAX_SIDE {
                let c = Array3::from_shape_simple_fn((8, side, side), || rng.gen_range(-1.0..1.0));
                let a = p.compute_affinity(&c).unwrap();
                let oracle = brute_force_affinity(ap, &c, mode).unwrap();
                assert!(a.iter().zip(oracle.iter()).all(|(x, y)| (x - y).abs() <= 1e-10));
                let att = p.nonlocal_attention(&a, &c).unwrap();
                let oracle = brute_force_attention(ap, &a, &c).unwrap();
                assert!(att.iter().zip(oracle.iter()).all(|(x, y)| (x - y).abs() <= 1e-10));
            }
        }
    }

    #[test]
    fn oracle_refuses_large_grids() {
        let arch = Architecture {
            channels: 4,
            ..Default::default()
        };
        let p = ModelParams::init(arch, 1).unwrap();
        let c = Array3::zeros((4, 9, 9));
        assert!(brute_force_affinity(p.affinity.as_ref().unwrap(), &c, NormalizeMode::Row).is_err());
    }
}

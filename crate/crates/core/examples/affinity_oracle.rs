//! Vectorized affinity and attention against the loop-based reference on
//! random RoI features.

use cpmask::losses::{brute_force_affinity, brute_force_attention};
use cpmask::net::{Architecture, ModelParams, NormalizeMode};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cpmask::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [NormalizeMode::Row, NormalizeMode::Global] {
        let arch = Architecture {
            channels: 8,
            roi_size: 5,
            mask_size: 10,
            normalize_mode: mode,
            ..Default::default()
        };
        let params = ModelParams::init(arch, 2)?;
        let ap = params.affinity.as_ref().expect("affinity enabled");
        let c = Array3::from_shape_simple_fn((8, 5, 5), || rng.gen_range(-1.0..1.0));
        let a = params.compute_affinity(&c)?;
        let att = params.nonlocal_attention(&a, &c)?;
        let da = (&a - &brute_force_affinity(ap, &c, mode)?).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        let dt = (&att - &brute_force_attention(ap, &a, &c)?).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        println!("{mode:?}: sum(A) = {:.6}, max |A - oracle| = {da:.2e}, max |att - oracle| = {dt:.2e}", a.sum());
    }
    Ok(())
}

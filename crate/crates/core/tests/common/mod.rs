#![allow(dead_code)]

use cpmask::losses::{ImageSample, RoiSample};
use cpmask::maskops::{make_roi_targets, BBox, BinaryMask, TargetParams};
use cpmask::net::{Architecture, NormalizeMode};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_arch(mode: NormalizeMode) -> Architecture {
    sized_arch(mode, 8, 4)
}

pub fn sized_arch(mode: NormalizeMode, channels: usize, roi_size: usize) -> Architecture {
    Architecture {
        channels,
        roi_size,
        mask_size: 2 * roi_size,
        use_boundary: true,
        use_affinity: true,
        normalize_mode: mode,
    }
}

pub fn target_params(arch: &Architecture) -> TargetParams {
    TargetParams {
        head_res: arch.mask_size,
        affinity_res: arch.roi_size,
        ..Default::default()
    }
}

pub fn tiny_batch(arch: &Architecture, seed: u64, n_images: usize) -> Vec<ImageSample> {
    sized_batch(arch, seed, n_images, 20)
}

/// Square `side`-pixel images with two elliptical instances each.
pub fn sized_batch(arch: &Architecture, seed: u64, n_images: usize, side: usize) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64 / 20.0;
    (0..n_images)
        .map(|i| {
            let image = Array3::from_shape_simple_fn((3, side, side), || rng.gen_range(0.0..1.0));
            let rois = (0..2)
                .map(|k| {
                    let cy = rng.gen_range(7.0 * s..13.0 * s);
                    let cx = rng.gen_range(7.0 * s..13.0 * s);
                    let ry = rng.gen_range(3.0 * s..6.0 * s);
                    let rx = rng.gen_range(3.0 * s..6.0 * s);
                    let mask = BinaryMask::from_fn(side, side, |r, c| {
                        let dy = (r as f64 + 0.5 - cy) / ry;
                        let dx = (c as f64 + 0.5 - cx) / rx;
                        dy * dy + dx * dx <= 1.0
                    });
                    let tight = mask.tight_box().expect("non-empty mask");
                    // Loosen the box so the targets contain background.
                    let bbox = BBox::new(tight.x - 1.5, tight.y - 1.0, tight.w + 3.0, tight.h + 2.5).unwrap();
                    RoiSample {
                        targets: make_roi_targets(&mask, &bbox, &target_params(arch)).unwrap(),
                        bbox,
                        supervised: !(i == 1 && k == 1),
                    }
                })
                .collect();
            ImageSample { image, rois }
        })
        .collect()
}

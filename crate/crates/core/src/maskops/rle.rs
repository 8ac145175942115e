//! Uncompressed COCO-style run-length encoding.
//!
//! Runs walk the mask in column-major order and alternate background /
//! foreground, always starting with a (possibly empty) background run.

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// RLE counts together with the mask size they describe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u32>,
    /// `[height, width]`
    pub size: [usize; 2],
}

pub fn encode_rle(mask: &BinaryMask) -> Rle {
    let (h, w) = (mask.height(), mask.width());
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for col in 0..w {
        for row in 0..h {
            let v = mask.get(row, col);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        counts,
        size: [h, w],
    }
}

/// Decode counts into a `height x width` mask.
///
/// Fails with a malformed-annotation error (id 0; callers that know the
/// annotation id re-tag it) when the counts do not sum to `height * width`.
pub fn decode_rle(counts: &[u32], height: usize, width: usize) -> Result<BinaryMask> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let expected = (height * width) as u64;
    if total != expected {
        return Err(Error::MalformedAnnotation {
            id: 0,
            reason: format!("RLE counts sum to {total}, expected {expected} ({height}x{width})"),
        });
    }
    let mut mask = BinaryMask::new(height, width);
    let mut idx = 0usize;
    let mut value = false;
    for &c in counts {
        if value {
            for k in idx..idx + c as usize {
                mask.set(k % height, k / height, true);
            }
        }
        idx += c as usize;
        value = !value;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_and_full_masks() {
        let empty = BinaryMask::new(2, 2);
        let rle = encode_rle(&empty);
        assert_eq!(rle.counts, vec![4]);
        assert_eq!(decode_rle(&rle.counts, 2, 2).unwrap(), empty);

        let full = BinaryMask::from_fn(2, 2, |_, _| true);
        let rle = encode_rle(&full);
        assert_eq!(rle.counts, vec![0, 4]);
        assert_eq!(decode_rle(&rle.counts, 2, 2).unwrap(), full);
    }

    #[test]
    fn column_major_order() {
        // Only (row 1, col 0) set: one background pixel then one foreground pixel.
        let mut m = BinaryMask::new(2, 2);
        m.set(1, 0, true);
        assert_eq!(encode_rle(&m).counts, vec![1, 1, 2]);
    }

    #[test]
    fn count_sum_mismatch_is_malformed() {
        let err = decode_rle(&[1, 2], 2, 2).unwrap_err();
        assert!(matches!(err, Error::MalformedAnnotation { .. }));
    }

    #[test]
    fn seeded_random_masks_round_trip() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(8, 8, |_, _| rng.gen_bool(0.5));
            let rle = encode_rle(&m);
            assert_eq!(rle.counts.iter().sum::<u32>(), 64);
            assert_eq!(decode_rle(&rle.counts, 8, 8).unwrap(), m, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(0.3));
            let rle = encode_rle(&m);
            prop_assert_eq!(decode_rle(&rle.counts, h, w).unwrap(), m);
        }
    }
}

//! Mask geometry and supervision targets.
//!
//! Coordinates are continuous with pixel centers at `integer + 0.5`; a pixel
//! `(row, col)` covers `[col, col + 1) x [row, row + 1)`.

mod boundary;
pub(crate) mod resample;
mod rle;
mod targets;

pub use boundary::{extract_boundary, BoundaryTarget};
pub use resample::{resample_to_roi, roi_align, roi_align_backward, sample_bilinear};
pub use rle::{decode_rle, encode_rle, Rle};
pub use targets::{make_roi_targets, RoiTargets, TargetParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boolean instance mask at image resolution, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.values[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Smallest pixel-aligned box containing every foreground pixel.
    pub fn tight_box(&self) -> Option<BBox> {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(row, col) {
                    r0 = r0.min(row);
                    r1 = r1.max(row);
                    c0 = c0.min(col);
                    c1 = c1.max(col);
                }
            }
        }
        if r0 == usize::MAX {
            return None;
        }
        Some(BBox {
            x: c0 as f64,
            y: r0 as f64,
            w: (c1 - c0 + 1) as f64,
            h: (r1 - r0 + 1) as f64,
        })
    }

    /// Mask as a real grid with 1.0 on foreground.
    pub fn to_grid(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.height, self.width), |(r, c)| {
            if self.get(r, c) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Axis-aligned box, top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn validate_in(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let inside = self.x < width as f64
            && self.y < height as f64
            && self.x + self.w > 0.0
            && self.y + self.h > 0.0;
        if !inside {
            return Err(Error::DegenerateBox(format!(
                "{self:?} does not intersect a {height}x{width} image"
            )));
        }
        Ok(())
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    /// Same box in the coordinates of a map downsampled by `stride`.
    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x: self.x * factor,
            y: self.y * factor,
            w: self.w * factor,
            h: self.h * factor,
        }
    }

    /// Intersection with `[0, width] x [0, height]`, or `None` when empty.
    pub fn clipped(&self, height: usize, width: usize) -> Option<BBox> {
        let x1 = self.x.max(0.0);
        let y1 = self.y.max(0.0);
        let x2 = self.x2().min(width as f64);
        let y2 = self.y2().min(height as f64);
        (x2 > x1 && y2 > y1).then_some(BBox {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    pub fn as_xywh(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch(format!(
            "iou between {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.values.iter().zip(&b.values) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_of(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::new(h, w);
        for &(r, c) in on {
            m.set(r, c, true);
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = mask_of(2, 2, &[(0, 0), (0, 1)]);
        let b = mask_of(2, 2, &[(0, 1), (1, 1)]);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let c = mask_of(2, 2, &[(1, 0)]);
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        let e = BinaryMask::new(2, 2);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn iou_rejects_shape_mismatch() {
        let a = BinaryMask::new(2, 2);
        let b = BinaryMask::new(2, 3);
        assert!(matches!(mask_iou(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn tight_box_of_mask() {
        let m = mask_of(5, 6, &[(1, 2), (3, 4)]);
        assert_eq!(m.tight_box().unwrap(), BBox::new(2.0, 1.0, 3.0, 3.0).unwrap());
        assert!(BinaryMask::new(3, 3).tight_box().is_none());
    }

    #[test]
    fn box_validation() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        let b = BBox::new(10.0, 10.0, 2.0, 2.0).unwrap();
        assert!(b.validate_in(8, 8).is_err());
        assert!(b.validate_in(11, 11).is_ok());
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(bits_a in proptest::collection::vec(any::<bool>(), 30),
                                        bits_b in proptest::collection::vec(any::<bool>(), 30)) {
            let a = BinaryMask::from_vec(5, 6, bits_a).unwrap();
            let b = BinaryMask::from_vec(5, 6, bits_b).unwrap();
            let ab = mask_iou(&a, &b).unwrap();
            let ba = mask_iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        }
    }
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::error::{Error, Result};
use crate::maskops::BinaryMask;

/// Shape families. Category ids are `1..=6` in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Pentagon,
    Star,
    Ellipse,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Square,
        ShapeKind::Circle,
        ShapeKind::Triangle,
        ShapeKind::Pentagon,
        ShapeKind::Star,
        ShapeKind::Ellipse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Star => "star",
            ShapeKind::Ellipse => "ellipse",
        }
    }

    pub fn category_id(self) -> u32 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u32 + 1
    }

    pub fn from_category_id(id: u32) -> Option<Self> {
        Self::ALL.get((id as usize).checked_sub(1)?).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Radius of the circle (around the center) that contains the shape,
    /// as a multiple of the scale.
    fn extent_factor(self) -> f64 {
        match self {
            ShapeKind::Square => std::f64::consts::FRAC_1_SQRT_2,
            _ => 0.5,
        }
    }
}

/// Short axis of ellipses relative to the long one.
pub const ELLIPSE_ASPECT: f64 = 0.55;
/// Inner radius of star vertices relative to the outer radius.
pub const STAR_INNER_RATIO: f64 = 0.45;

/// Minimum scale in pixels.
pub const MIN_SCALE: f64 = 8.0;
/// Minimum distance between the shape's extent and the image border.
pub const MARGIN: f64 = 2.0;

/// One synthetic instance. `scale` is the side of a square, and the
/// diameter of the circumscribing circle for every other family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: ShapeKind,
    /// `(x, y)` in pixels.
    pub center: (f64, f64),
    pub scale: f64,
    pub rotation: f64,
    pub texture: Texture,
    pub base_color: [f64; 3],
}

impl ShapeSpec {
    pub fn circumradius(&self) -> f64 {
        self.scale * self.category.extent_factor()
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if !(self.scale >= MIN_SCALE) {
            return Err(Error::SpecOutOfBounds(format!(
                "scale {} below minimum {MIN_SCALE}",
                self.scale
            )));
        }
        let r = self.circumradius() + MARGIN;
        let (cx, cy) = self.center;
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > width as f64 || cy + r > height as f64 {
            return Err(Error::SpecOutOfBounds(format!(
                "{} at ({cx:.1}, {cy:.1}) scale {:.1} does not fit {height}x{width} with margin {MARGIN}",
                self.category.name(),
                self.scale
            )));
        }
        Ok(())
    }

    /// Whether the continuous point `(x, y)` lies inside the shape.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        // Rotate into the shape frame.
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let half = self.scale / 2.0;
        match self.category {
            ShapeKind::Square => u.abs() < half && v.abs() < half,
            ShapeKind::Circle => u * u + v * v < half * half,
            ShapeKind::Ellipse => {
                let b = half * ELLIPSE_ASPECT;
                (u / half).powi(2) + (v / b).powi(2) < 1.0
            }
            ShapeKind::Triangle => point_in_polygon(u, v, &regular_polygon(3, half, 0.0)),
            ShapeKind::Pentagon => point_in_polygon(u, v, &regular_polygon(5, half, 0.0)),
            ShapeKind::Star => point_in_polygon(u, v, &star_polygon(5, half, half * STAR_INNER_RATIO)),
        }
    }
}

/// Vertices of a regular polygon with one vertex pointing up (negative v).
fn regular_polygon(n: usize, radius: f64, phase: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = phase - PI / 2.0 + 2.0 * PI * k as f64 / n as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

fn star_polygon(points: usize, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    (0..2 * points)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = -PI / 2.0 + PI * k as f64 / points as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even-odd crossing test.
fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Boolean rasterization by testing every pixel center.
pub fn rasterize_shape(spec: &ShapeSpec, height: usize, width: usize) -> Result<BinaryMask> {
    spec.check_bounds(height, width)?;
    Ok(BinaryMask::from_fn(height, width, |r, c| {
        spec.contains(c as f64 + 0.5, r as f64 + 0.5)
    }))
}

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Appearance pattern shared by instances and backgrounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Stripes { period: f64, angle: f64, phase: f64 },
    Dots { spacing: f64, radius: f64 },
    NoiseTint { amplitude: f64, seed: u64 },
    Gradient { angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextureKind {
    Stripes,
    Dots,
    NoiseTint,
    Gradient,
}

/// Modulation depth of the pattern on top of the base color.
const DEPTH: f64 = 0.5;

impl Texture {
    pub fn kind(&self) -> TextureKind {
        match self {
            Texture::Stripes { .. } => TextureKind::Stripes,
            Texture::Dots { .. } => TextureKind::Dots,
            Texture::NoiseTint { .. } => TextureKind::NoiseTint,
            Texture::Gradient { .. } => TextureKind::Gradient,
        }
    }

    /// Color of pixel `(row, col)` on an image of the given size.
    pub fn shade(&self, base: [f64; 3], row: usize, col: usize, height: usize, width: usize) -> [f64; 3] {
        let x = col as f64 + 0.5;
        let y = row as f64 + 0.5;
        let modulate = |p: f64| base.map(|b| (b * (1.0 - DEPTH + DEPTH * p)).clamp(0.0, 1.0));
        match *self {
            Texture::Stripes { period, angle, phase } => {
                let t = x * angle.cos() + y * angle.sin();
                modulate(0.5 + 0.5 * (2.0 * PI * t / period + phase).sin())
            }
            Texture::Dots { spacing, radius } => {
                let fx = (x / spacing).fract() - 0.5;
                let fy = (y / spacing).fract() - 0.5;
                let inside = (fx * fx + fy * fy).sqrt() * spacing < radius;
                modulate(if inside { 1.0 } else { 0.0 })
            }
            Texture::NoiseTint { amplitude, seed } => {
                let mut out = base;
                for (ch, v) in out.iter_mut().enumerate() {
                    let n = hash_unit(seed, row as u64, col as u64, ch as u64);
                    *v = (*v + amplitude * (2.0 * n - 1.0)).clamp(0.0, 1.0);
                }
                out
            }
            Texture::Gradient { angle } => {
                let half = 0.5 * height.max(width) as f64;
                let t = ((x - 0.5 * width as f64) * angle.cos() + (y - 0.5 * height as f64) * angle.sin()) / half;
                modulate((0.5 + 0.5 * t).clamp(0.0, 1.0))
            }
        }
    }
}

/// Deterministic per-pixel noise in `[0, 1)` (splitmix64 finalizer).
fn hash_unit(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ c.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// The single texture sampler used for every instance and background.
pub fn sample_texture<R: Rng + ?Sized>(rng: &mut R) -> Texture {
    match rng.gen_range(0..4) {
        0 => Texture::Stripes {
            period: rng.gen_range(4.0..10.0),
            angle: rng.gen_range(0.0..PI),
            phase: rng.gen_range(0.0..2.0 * PI),
        },
        1 => Texture::Dots {
            spacing: rng.gen_range(5.0..9.0),
            radius: rng.gen_range(1.0..2.5),
        },
        2 => Texture::NoiseTint {
            amplitude: rng.gen_range(0.1..0.35),
            seed: rng.gen(),
        },
        _ => Texture::Gradient {
            angle: rng.gen_range(0.0..2.0 * PI),
        },
    }
}

pub fn sample_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [
        rng.gen_range(0.15..1.0),
        rng.gen_range(0.15..1.0),
        rng.gen_range(0.15..1.0),
    ]
}

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use crate::error::{Error, Result};

/// How the raw affinity logits are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Softmax over keys for every query pixel.
    Row,
    /// One softmax over every (query, key) pair.
    Global,
}

impl std::str::FromStr for NormalizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Self::Row),
            "global" => Ok(Self::Global),
            other => Err(Error::Config(format!("unknown normalize_mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for NormalizeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Row => "row",
            Self::Global => "global",
        })
    }
}

/// Architecture sizes and module switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    /// Side of the RoI / affinity grid.
    pub roi_size: usize,
    /// Side of the mask and boundary outputs; always `2 * roi_size`.
    pub mask_size: usize,
    pub use_boundary: bool,
    pub use_affinity: bool,
    pub normalize_mode: NormalizeMode,
}

/// Backbone output stride.
pub const STRIDE: usize = 4;
/// Guard added to the per-pixel standard deviation in z-scoring.
pub const ZSCORE_EPS: f64 = 1e-5;
/// Initial bias of the boundary and mask output convolutions.
pub const OUTPUT_BIAS_INIT: f64 = -2.0;
pub const ALPHA_INIT: f64 = 1.0;

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: 64,
            roi_size: 14,
            mask_size: 28,
            use_boundary: true,
            use_affinity: true,
            normalize_mode: NormalizeMode::Row,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "channels must be even and >= 2, got {}",
                self.channels
            )));
        }
        if self.roi_size == 0 {
            return Err(Error::Config("roi_size must be > 0".into()));
        }
        if self.mask_size != 2 * self.roi_size {
            return Err(Error::Config(format!(
                "mask_size must be 2 * roi_size ({}), got {}",
                2 * self.roi_size,
                self.mask_size
            )));
        }
        Ok(())
    }

    pub fn embed_channels(&self) -> usize {
        self.channels / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryParams {
    pub convs: [Conv; 4],
    /// 1x1 conv to one channel.
    pub out: Conv,
    /// Fusion weight of the boundary probability.
    pub alpha: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityParams {
    pub theta: Conv,
    pub phi: Conv,
    pub g: Conv,
}

/// All learnable weights. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub backbone: [Conv; 4],
    pub boundary: Option<BoundaryParams>,
    pub mask_head: [Conv; 4],
    pub affinity: Option<AffinityParams>,
    pub predictor: Conv,
}

const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

impl ModelParams {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = arch.channels;
        let relu3 = |i, rng: &mut ChaCha8Rng| Conv::init(i, c, 3, RELU_GAIN, rng);
        let backbone = [relu3(3, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng)];
        let boundary = arch.use_boundary.then(|| {
            let convs = [relu3(c, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng)];
            let mut out = Conv::init(c, 1, 1, LINEAR_GAIN, &mut rng);
            out.bias.fill(OUTPUT_BIAS_INIT);
            BoundaryParams {
                convs,
                out,
                alpha: Array1::from_elem(1, ALPHA_INIT),
            }
        });
        let mask_head = [relu3(c, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng), relu3(c, &mut rng)];
        let affinity = arch.use_affinity.then(|| {
            let d = arch.embed_channels();
            AffinityParams {
                theta: Conv::init(c, d, 1, LINEAR_GAIN, &mut rng),
                phi: Conv::init(c, d, 1, LINEAR_GAIN, &mut rng),
                g: Conv::init(c, c, 1, LINEAR_GAIN, &mut rng),
            }
        });
        let mut predictor = Conv::init(c, 1, 1, LINEAR_GAIN, &mut rng);
        predictor.bias.fill(OUTPUT_BIAS_INIT);
        Ok(Self {
            arch,
            backbone,
            boundary,
            mask_head,
            affinity,
            predictor,
        })
    }

    /// Same structure, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, v| v.fill(0.0));
        z
    }

    fn convs(&self) -> Vec<(String, &Conv)> {
        let mut out = Vec::new();
        for (i, c) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}"), c));
        }
        if let Some(b) = &self.boundary {
            for (i, c) in b.convs.iter().enumerate() {
                out.push((format!("boundary.{i}"), c));
            }
            out.push(("boundary.out".into(), &b.out));
        }
        for (i, c) in self.mask_head.iter().enumerate() {
            out.push((format!("mask_head.{i}"), c));
        }
        if let Some(a) = &self.affinity {
            out.push(("affinity.theta".into(), &a.theta));
            out.push(("affinity.phi".into(), &a.phi));
            out.push(("affinity.g".into(), &a.g));
        }
        out.push(("predictor".into(), &self.predictor));
        out
    }

    /// Every parameter tensor as `(name, shape, values)`, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, conv) in self.convs() {
            out.push((
                format!("{name}.weight"),
                conv.weight.shape().to_vec(),
                conv.weight.as_slice().expect("contiguous weight"),
            ));
            out.push((
                format!("{name}.bias"),
                conv.bias.shape().to_vec(),
                conv.bias.as_slice().expect("contiguous bias"),
            ));
            if name == "boundary.out" {
                let alpha = &self.boundary.as_ref().expect("boundary present").alpha;
                out.push(("fusion.alpha".into(), vec![1], alpha.as_slice().expect("contiguous")));
            }
        }
        out
    }

    /// Visit every tensor mutably, in the same order as [`Self::tensors`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        let mut visit = |name: String, conv: &mut Conv| {
            f(&format!("{name}.weight"), conv.weight.as_slice_mut().expect("contiguous"));
            f(&format!("{name}.bias"), conv.bias.as_slice_mut().expect("contiguous"));
        };
        for (i, c) in self.backbone.iter_mut().enumerate() {
            visit(format!("backbone.{i}"), c);
        }
        if let Some(b) = &mut self.boundary {
            for (i, c) in b.convs.iter_mut().enumerate() {
                visit(format!("boundary.{i}"), c);
            }
            visit("boundary.out".into(), &mut b.out);
        }
        if let Some(b) = &mut self.boundary {
            f("fusion.alpha", b.alpha.as_slice_mut().expect("contiguous"));
        }
        let mut visit = |name: String, conv: &mut Conv| {
            f(&format!("{name}.weight"), conv.weight.as_slice_mut().expect("contiguous"));
            f(&format!("{name}.bias"), conv.bias.as_slice_mut().expect("contiguous"));
        };
        for (i, c) in self.mask_head.iter_mut().enumerate() {
            visit(format!("mask_head.{i}"), c);
        }
        if let Some(a) = &mut self.affinity {
            visit("affinity.theta".into(), &mut a.theta);
            visit("affinity.phi".into(), &mut a.phi);
            visit("affinity.g".into(), &mut a.g);
        }
        visit("predictor".into(), &mut self.predictor);
    }

    /// Flattened copy of every value, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, _, v)| v.iter().copied()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    /// `self += scale * other`; both must share a structure.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.flatten();
        let mut offset = 0;
        self.for_each_mut(|_, v| {
            for (dst, s) in v.iter_mut().zip(&src[offset..]) {
                *dst += scale * s;
            }
            offset += v.len();
        });
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

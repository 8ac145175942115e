use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::net::{Architecture, NormalizeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionMode {
    /// Mask supervision on every category.
    Full,
    /// Masks on base categories only; novel RoIs carry no mask loss.
    Partial,
    /// Partial training followed by fine-tuning on `shots` novel instances
    /// per category.
    Fewshot,
}

impl FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial),
            "fewshot" => Ok(Self::Fewshot),
            other => Err(Error::Config(format!("unknown supervision_mode {other:?}"))),
        }
    }
}

impl fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Partial => "partial",
            Self::Fewshot => "fewshot",
        })
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub supervision_mode: SupervisionMode,
    pub shots: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_images: usize,
    pub warmup_iters: u64,
    pub total_iters: u64,
    pub lambda_detect: f64,
    pub lambda_boundary: f64,
    pub lambda_affinity: f64,
    pub lambda_segment: f64,
    pub channels: usize,
    pub roi_size: usize,
    pub mask_size: usize,
    pub normalize_mode: NormalizeMode,
    pub use_boundary: bool,
    pub use_affinity: bool,
    pub box_jitter: f64,
    pub seed: u64,
    /// Few-shot fine-tuning length and learning rate.
    pub finetune_iters: u64,
    pub finetune_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let w = LossWeights::default();
        Self {
            supervision_mode: SupervisionMode::Partial,
            shots: 10,
            lr: 0.005,
            momentum: 0.9,
            batch_images: 8,
            warmup_iters: 100,
            total_iters: 3000,
            lambda_detect: w.detect,
            lambda_boundary: w.boundary,
            lambda_affinity: w.affinity,
            lambda_segment: w.segment,
            channels: arch.channels,
            roi_size: arch.roi_size,
            mask_size: arch.mask_size,
            normalize_mode: arch.normalize_mode,
            use_boundary: arch.use_boundary,
            use_affinity: arch.use_affinity,
            box_jitter: 0.05,
            seed: 0,
            finetune_iters: 500,
            finetune_lr: 0.001,
        }
    }
}

macro_rules! config_fields {
    ($($name:ident),* $(,)?) => {
        const FIELD_NAMES: &[&str] = &[$(stringify!($name)),*];

        impl TrainConfig {
            fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.parse().map_err(|_| {
                            Error::Config(format!("bad value {value:?} for {key}"))
                        })?;
                    })*
                    other => return Err(Error::Config(format!("unknown config key {other:?}"))),
                }
                Ok(())
            }

            /// Flat `key=value` form, one line per field, readable by
            /// [`TrainConfig::parse`].
            pub fn to_kv_string(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{}={}\n", stringify!($name), self.$name));)*
                out
            }
        }
    };
}

config_fields!(
    supervision_mode,
    shots,
    lr,
    momentum,
    batch_images,
    warmup_iters,
    total_iters,
    lambda_detect,
    lambda_boundary,
    lambda_affinity,
    lambda_segment,
    channels,
    roi_size,
    mask_size,
    normalize_mode,
    use_boundary,
    use_affinity,
    box_jitter,
    seed,
    finetune_iters,
    finetune_lr,
);

impl TrainConfig {
    pub fn field_names() -> &'static [&'static str] {
        FIELD_NAMES
    }

    /// Parse `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            config.set_field(key, value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            channels: self.channels,
            roi_size: self.roi_size,
            mask_size: self.mask_size,
            use_boundary: self.use_boundary,
            use_affinity: self.use_affinity,
            normalize_mode: self.normalize_mode,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            detect: self.lambda_detect,
            boundary: self.lambda_boundary,
            affinity: self.lambda_affinity,
            segment: self.lambda_segment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return bad(format!("finetune_lr must be > 0, got {}", self.finetune_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.warmup_iters > self.total_iters {
            return bad(format!(
                "warmup_iters ({}) exceeds total_iters ({})",
                self.warmup_iters, self.total_iters
            ));
        }
        if self.batch_images == 0 {
            return bad("batch_images must be >= 1".into());
        }
        if self.supervision_mode == SupervisionMode::Fewshot && self.shots == 0 {
            return bad("shots must be >= 1 in fewshot mode".into());
        }
        if !(0.0..0.5).contains(&self.box_jitter) {
            return bad(format!("box_jitter must be in [0, 0.5), got {}", self.box_jitter));
        }
        self.loss_weights().validate()?;
        self.architecture().validate()
    }
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport};
use crate::engine::{train, TrainConfig, TrainOptions};
use crate::error::Result;
use crate::shapesdata::{Dataset, ImageSplit};

/// The four module-flag settings, in table order.
pub const VARIANTS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("+BM", true, false),
    ("+AM", false, true),
    ("+BM+AM", true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub use_boundary: bool,
    pub use_affinity: bool,
    pub seed: u64,
    pub novel_ap: f64,
    pub novel_ap50: f64,
    pub novel_ap75: f64,
    pub base_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    /// Mean novel AP of a variant over its seeds.
    pub fn mean_novel_ap(&self, variant: &str) -> Option<f64> {
        let v: Vec<f64> = self.runs.iter().filter(|r| r.variant == variant).map(|r| r.novel_ap).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>6} {:>9} {:>9} {:>9} {:>9}", "variant", "seed", "novel AP", "AP50", "AP75", "base AP");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                r.variant,
                r.seed,
                100.0 * r.novel_ap,
                100.0 * r.novel_ap50,
                100.0 * r.novel_ap75,
                100.0 * r.base_ap
            );
        }
        for (name, ..) in VARIANTS {
            if let Some(m) = self.mean_novel_ap(name) {
                let _ = writeln!(out, "mean {name:<10} novel AP {:.2}", 100.0 * m);
            }
        }
        out
    }
}

/// Outcome of one trained variant, with the state kept for reuse.
pub struct VariantResult {
    pub run: AblationRun,
    pub report: EvalReport,
    pub state: crate::engine::TrainState,
}

/// Train one module-flag variant with `config` (flags overridden) and
/// evaluate it on the validation split.
pub fn run_variant(dataset: &Dataset, config: &TrainConfig, variant: usize, seed: u64) -> Result<VariantResult> {
    let (name, use_boundary, use_affinity) = VARIANTS[variant];
    let config = TrainConfig {
        use_boundary,
        use_affinity,
        seed,
        ..config.clone()
    };
    let out = train(None, &config, dataset, TrainOptions::default())?;
    let report = evaluate(&out.state.params, dataset, ImageSplit::Val)?;
    log::info!("{name} seed {seed}: novel AP {:.4}", report.novel.ap);
    Ok(VariantResult {
        run: AblationRun {
            variant: name.to_string(),
            use_boundary,
            use_affinity,
            seed,
            novel_ap: report.novel.ap,
            novel_ap50: report.novel.ap50,
            novel_ap75: report.novel.ap75,
            base_ap: report.base.ap,
        },
        report,
        state: out.state,
    })
}

/// All four variants for each seed `config.seed, config.seed + 1, ...`.
pub fn run_ablation(dataset: &Dataset, config: &TrainConfig, seeds: usize) -> Result<AblationTable> {
    let mut runs = Vec::new();
    for s in 0..seeds as u64 {
        for v in 0..VARIANTS.len() {
            runs.push(run_variant(dataset, config, v, config.seed + s)?.run);
        }
    }
    Ok(AblationTable { runs })
}

//! The four module-flag variants on a tiny budget, one seed.

use cpmask::engine::TrainConfig;
use cpmask::evalviz::run_ablation;
use cpmask::shapesdata::{generate_samples, GenConfig};

fn main() -> cpmask::Result<()> {
    let ds = generate_samples(&GenConfig {
        n_train: 80,
        n_val: 20,
        ..Default::default()
    })?;
    let config = TrainConfig {
        channels: 8,
        roi_size: 7,
        mask_size: 14,
        batch_images: 4,
        warmup_iters: 10,
        total_iters: 100,
        lr: 0.02,
        ..Default::default()
    };
    print!("{}", run_ablation(&ds, &config, 1)?.to_text());
    Ok(())
}

//! Base-only training followed by 10-shot fine-tuning on the novel shapes.

use cpmask::engine::{finetune_fewshot, select_fewshot, train, TrainConfig, TrainOptions};
use cpmask::evalviz::evaluate;
use cpmask::shapesdata::{generate_samples, GenConfig, ImageSplit};

fn main() -> cpmask::Result<()> {
    let ds = generate_samples(&GenConfig {
        n_train: 120,
        n_val: 30,
        ..Default::default()
    })?;
    let config = TrainConfig {
        channels: 8,
        roi_size: 7,
        mask_size: 14,
        batch_images: 4,
        warmup_iters: 10,
        total_iters: 150,
        lr: 0.02,
        finetune_iters: 60,
        finetune_lr: 0.005,
        ..Default::default()
    };
    println!("10-shot subset: {} novel instances", select_fewshot(&ds, 10, config.seed)?.len());
    let base = train(None, &config, &ds, TrainOptions::default())?;
    let before = evaluate(&base.state.params, &ds, ImageSplit::Val)?.novel.ap;
    let tuned = finetune_fewshot(base.state, &ds, 10, &config, TrainOptions::default())?;
    let after = evaluate(&tuned.state.params, &ds, ImageSplit::Val)?.novel.ap;
    println!("novel AP before {before:.3}, after 10-shot fine-tuning {after:.3}");
    Ok(())
}

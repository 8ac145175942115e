//! Oracle-box mask AP: ground truth as prediction, then a briefly trained
//! model.

use cpmask::engine::{train, TrainConfig, TrainOptions};
use cpmask::evalviz::{evaluate, evaluate_ground_truth, Metrics};
use cpmask::shapesdata::{generate_samples, GenConfig, ImageSplit};

fn main() -> cpmask::Result<()> {
    let m = Metrics::from_ious(&[0.9, 0.6]);
    println!("IoUs 0.9, 0.6 -> AP {:.2} AP50 {:.2} AP75 {:.2}", m.ap, m.ap50, m.ap75);

    let ds = generate_samples(&GenConfig {
        n_train: 80,
        n_val: 20,
        ..Default::default()
    })?;
    println!("ground truth: AP {}", evaluate_ground_truth(&ds, ImageSplit::Val)?.all.ap);

    let config = TrainConfig {
        channels: 8,
        roi_size: 7,
        mask_size: 14,
        batch_images: 4,
        warmup_iters: 10,
        total_iters: 150,
        lr: 0.02,
        ..Default::default()
    };
    let out = train(None, &config, &ds, TrainOptions::default())?;
    let report = evaluate(&out.state.params, &ds, ImageSplit::Val)?;
    for (name, m) in &report.per_category {
        println!("{name:<9} AP {:.3} AP50 {:.3} AP75 {:.3} (n={})", m.ap, m.ap50, m.ap75, m.n);
    }
    println!("base {:.3}  novel {:.3}  all {:.3}", report.base.ap, report.novel.ap, report.all.ap);
    Ok(())
}

//! Short partial-supervision run, interrupted and resumed from a checkpoint.

use cpmask::engine::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainOptions};
use cpmask::shapesdata::{generate_samples, GenConfig};

fn main() -> cpmask::Result<()> {
    let ds = generate_samples(&GenConfig {
        n_train: 60,
        n_val: 0,
        ..Default::default()
    })?;
    let config = TrainConfig {
        channels: 8,
        roi_size: 7,
        mask_size: 14,
        batch_images: 4,
        warmup_iters: 10,
        total_iters: 60,
        lr: 0.02,
        ..Default::default()
    };
    let straight = train(None, &config, &ds, TrainOptions::default())?;

    let dir = tempfile::tempdir().map_err(|e| cpmask::Error::InvalidArgument(e.to_string()))?;
    let path = dir.path().join("checkpoint.bin");
    let half = train(
        None,
        &config,
        &ds,
        TrainOptions {
            stop_at: Some(30),
            ..Default::default()
        },
    )?;
    save_checkpoint(&half.state, &path)?;
    let resumed = train(Some(load_checkpoint(&path)?), &config, &ds, TrainOptions::default())?;

    for r in straight.log.iter().step_by(10) {
        println!("iter {:>3}  total {:.4}  lr {}", r.iter, r.total, r.lr);
    }
    let a = straight.log.last().unwrap().total;
    let b = resumed.log.last().unwrap().total;
    println!("final loss straight {a:.6}, resumed {b:.6}, delta {:.1e}", (a - b).abs());
    Ok(())
}

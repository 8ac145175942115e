//! Boundary, affinity and mask overlay PNGs for one image.
//!
//! `cargo run --example heatmaps -- [out_dir]`

use cpmask::engine::{train, TrainConfig, TrainOptions};
use cpmask::evalviz::emit_heatmaps;
use cpmask::shapesdata::{generate_samples, GenConfig};

fn main() -> cpmask::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example_heatmaps".into());
    let ds = generate_samples(&GenConfig {
        n_train: 40,
        n_val: 4,
        ..Default::default()
    })?;
    let config = TrainConfig {
        channels: 8,
        roi_size: 7,
        mask_size: 14,
        batch_images: 4,
        warmup_iters: 10,
        total_iters: 80,
        lr: 0.02,
        ..Default::default()
    };
    let state = train(None, &config, &ds, TrainOptions::default())?.state;
    let image_id = ds.samples.last().unwrap().image_id;
    for f in emit_heatmaps(&state.params, &ds, image_id, std::path::Path::new(&out))? {
        println!("{}", f.display());
    }
    Ok(())
}

//! Write a small synthetic dataset and load it back.
//!
//! `cargo run --example generate_dataset -- [out_dir]`

use cpmask::shapesdata::{generate_dataset, load_dataset, CategorySplit, GenConfig};

fn main() -> cpmask::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example_shapes".into());
    let out = std::path::Path::new(&out);
    let config = GenConfig {
        n_train: 40,
        n_val: 10,
        ..Default::default()
    };
    let manifest = generate_dataset(&config, out)?;
    let ds = load_dataset(out)?;
    println!("{} images, {} annotations in {}", ds.samples.len(), manifest.counts.annotations, out.display());
    for split in [CategorySplit::Base, CategorySplit::Novel] {
        for id in ds.categories_in(split) {
            let n = ds.iter().flat_map(|s| &s.instances).filter(|i| i.category_id == id).count();
            println!("  {split:?} {:<9} {n} instances", ds.category(id).unwrap().name);
        }
    }
    Ok(())
}

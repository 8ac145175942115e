//! RLE encoding, boundary extraction and per-RoI training targets for one
//! rasterized shape.

use cpmask::maskops::{decode_rle, encode_rle, make_roi_targets, BBox, TargetParams};
use cpmask::shapesdata::{rasterize_shape, sample_color, sample_texture, ShapeKind, ShapeSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpmask::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ShapeSpec {
        category: ShapeKind::Star,
        center: (32.0, 30.0),
        scale: 18.0,
        rotation: 0.3,
        texture: sample_texture(&mut rng),
        base_color: sample_color(&mut rng),
    };
    let mask = rasterize_shape(&spec, 64, 64)?;
    let rle = encode_rle(&mask);
    println!("star: area {} px, {} RLE runs", mask.area(), rle.counts.len());
    assert_eq!(decode_rle(&rle.counts, 64, 64)?, mask);

    let tight = mask.tight_box().expect("non-empty");
    let bbox = BBox::new(tight.x - 2.0, tight.y - 2.0, tight.w + 4.0, tight.h + 4.0)?;
    let t = make_roi_targets(&mask, &bbox, &TargetParams::default())?;
    println!(
        "targets: mask {:?}, {} boundary pixels, {} fg / {} bg affinity cells",
        t.mask_target.dim(),
        t.boundary_target.count(),
        t.fg_indices.len(),
        t.bg_indices.len()
    );
    let (h, w) = t.mask_target.dim();
    let b = t.boundary_target.as_real();
    for r in (0..h).step_by(2) {
        let line: String = (0..w)
            .map(|c| match (b[[r, c]] > 0.5, t.mask_target[[r, c]] >= 0.5) {
                (true, _) => '#',
                (false, true) => '.',
                _ => ' ',
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}

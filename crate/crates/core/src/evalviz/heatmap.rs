use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::paste_mask;
use crate::engine::target_params;
use crate::error::{Error, Result};
use crate::maskops::make_roi_targets;
use crate::net::{image_to_tensor, layers::sigmoid, ModelParams};
use crate::shapesdata::Dataset;

/// Each heatmap cell is written as a square of this many pixels.
pub const HEATMAP_SCALE: u32 = 8;

/// Viridis anchor colors at 0, 0.25, 0.5, 0.75, 1.
const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Map a value in `[0, 1]` to a viridis-like color.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (v.floor() as usize).min(VIRIDIS.len() - 2);
    let t = v - i as f64;
    std::array::from_fn(|k| (VIRIDIS[i][k] * (1.0 - t) + VIRIDIS[i + 1][k] * t).round() as u8)
}

/// Rescale to `[0, 1]` by the map's own min and max; a constant map becomes
/// all zeros.
pub fn minmax_normalize(m: &Array2<f64>) -> Array2<f64> {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::zeros(m.dim());
    }
    m.mapv(|v| (v - lo) / (hi - lo))
}

/// Mean of the affinity rows in `fg`, reshaped to the `h x w` grid.
pub fn affinity_heatmap(a: &Array2<f64>, fg: &[usize], h: usize, w: usize) -> Result<Array2<f64>> {
    if a.dim() != (h * w, h * w) {
        return Err(Error::ShapeMismatch(format!("affinity {:?} vs grid {h}x{w}", a.dim())));
    }
    if fg.is_empty() {
        return Err(Error::InvalidArgument("affinity heatmap needs a foreground pixel".into()));
    }
    let mut out = Array2::zeros((h, w));
    for &i in fg {
        for (m, v) in a.row(i).iter().enumerate() {
            out[[m / w, m % w]] += v;
        }
    }
    Ok(out / fg.len() as f64)
}

fn write_heatmap(m: &Array2<f64>, path: &Path) -> Result<()> {
    let norm = minmax_normalize(m);
    let (h, w) = norm.dim();
    let img = RgbImage::from_fn(w as u32 * HEATMAP_SCALE, h as u32 * HEATMAP_SCALE, |x, y| {
        Rgb(colormap(norm[[(y / HEATMAP_SCALE) as usize, (x / HEATMAP_SCALE) as usize]]))
    });
    img.save(path)?;
    Ok(())
}

/// Write three PNGs per instance of `image_id` into `out_dir`:
/// `{image}_{roi}_boundary.png`, `{image}_{roi}_affinity.png` and
/// `{image}_{roi}_mask.png`.
///
/// Heatmaps are min-max normalized per map and colormapped. The affinity
/// heatmap averages the rows of ground-truth foreground pixels, falling
/// back to pixels whose predicted mask probability is at least 0.5. When a
/// module is disabled its heatmap is flat. The mask image is the scene with
/// the pasted prediction tinted and the box outlined.
pub fn emit_heatmaps(params: &ModelParams, dataset: &Dataset, image_id: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let scene = dataset
        .find(image_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no image with id {image_id}")))?;
    if scene.instances.is_empty() {
        return Err(Error::InvalidArgument(format!("image {image_id} has no instances")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let arch = params.arch;
    let boxes: Vec<_> = scene.instances.iter().map(|i| i.bbox).collect();
    let forwards = params.full_forward(&image_to_tensor(&scene.image), &boxes)?;
    let tp = target_params(&crate::engine::TrainConfig {
        roi_size: arch.roi_size,
        mask_size: arch.mask_size,
        ..Default::default()
    });

    let mut written = Vec::new();
    for (k, (inst, fwd)) in scene.instances.iter().zip(&forwards).enumerate() {
        let path_for = |kind: &str| out_dir.join(format!("{image_id}_{k}_{kind}.png"));

        let boundary = match &fwd.boundary_logits {
            Some(l) => l.mapv(sigmoid),
            None => Array2::zeros((arch.mask_size, arch.mask_size)),
        };
        let p = path_for("boundary");
        write_heatmap(&boundary, &p)?;
        written.push(p);

        let (h, w) = (arch.roi_size, arch.roi_size);
        let affinity = match &fwd.affinity {
            Some(a) => {
                let mut fg = make_roi_targets(&inst.mask, &inst.bbox, &tp)?.fg_indices;
                if fg.is_empty() {
                    let prob = fwd.mask_logits.mapv(sigmoid);
                    fg = (0..h * w)
                        .filter(|&i| {
                            let (r, c) = (i / w, i % w);
                            let mean = (prob[[2 * r, 2 * c]]
                                + prob[[2 * r + 1, 2 * c]]
                                + prob[[2 * r, 2 * c + 1]]
                                + prob[[2 * r + 1, 2 * c + 1]])
                                / 4.0;
                            mean >= 0.5
                        })
                        .collect();
                }
                if fg.is_empty() {
                    Array2::zeros((h, w))
                } else {
                    affinity_heatmap(a, &fg, h, w)?
                }
            }
            None => Array2::zeros((h, w)),
        };
        let p = path_for("affinity");
        write_heatmap(&affinity, &p)?;
        written.push(p);

        let mask = paste_mask(&fwd.mask_logits.mapv(sigmoid), &inst.bbox, scene.height(), scene.width());
        let mut overlay = scene.image.clone();
        for (x, y, px) in overlay.enumerate_pixels_mut() {
            if mask.get(y as usize, x as usize) {
                px.0 = std::array::from_fn(|c| ((px.0[c] as f64 + [255.0, 64.0, 32.0][c]) / 2.0) as u8);
            }
        }
        draw_box(&mut overlay, &inst.bbox);
        let p = path_for("mask");
        overlay.save(&p)?;
        written.push(p);
    }
    Ok(written)
}

fn draw_box(img: &mut RgbImage, b: &crate::maskops::BBox) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (b.x.floor() as i64).clamp(0, w - 1);
    let y0 = (b.y.floor() as i64).clamp(0, h - 1);
    let x1 = (b.x2().ceil() as i64 - 1).clamp(0, w - 1);
    let y1 = (b.y2().ceil() as i64 - 1).clamp(0, h - 1);
    let color = Rgb([255, 255, 0]);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, color);
        img.put_pixel(x as u32, y1 as u32, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, color);
        img.put_pixel(x1 as u32, y as u32, color);
    }
}

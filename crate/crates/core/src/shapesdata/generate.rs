use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{write_annotation_file, AnnotationFile, CategoryEntry};
use super::shapes::{rasterize_shape, ShapeKind, ShapeSpec, MARGIN, MIN_SCALE};
use super::texture::{sample_color, sample_texture};
use super::{Background, CategorySplit, Dataset, ImageSplit, Instance, SceneSample};
use crate::error::{Error, Result};
use crate::maskops::BinaryMask;

pub const GENERATOR_VERSION: &str = "shapes-1";

/// Largest allowed overlap, as a fraction of the smaller instance's area.
/// Bounds the pairwise IoU by the same value.
const MAX_OVERLAP: f64 = 0.2;
const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub base_cats: Vec<ShapeKind>,
    pub novel_cats: Vec<ShapeKind>,
    pub height: usize,
    pub width: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 2000,
            n_val: 300,
            base_cats: vec![ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle],
            novel_cats: vec![ShapeKind::Pentagon, ShapeKind::Star, ShapeKind::Ellipse],
            height: 96,
            width: 96,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_cats.is_empty() || self.novel_cats.is_empty() {
            return Err(Error::InvalidArgument(
                "base and novel category lists must both be non-empty".into(),
            ));
        }
        if let Some(k) = self.base_cats.iter().find(|k| self.novel_cats.contains(k)) {
            return Err(Error::InvalidArgument(format!(
                "category {} is both base and novel",
                k.name()
            )));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::InvalidArgument("images must be at least 32x32".into()));
        }
        Ok(())
    }

    fn active(&self) -> Vec<ShapeKind> {
        let mut all: Vec<ShapeKind> = self.base_cats.iter().chain(&self.novel_cats).copied().collect();
        all.sort();
        all
    }

    fn categories(&self) -> Vec<CategoryEntry> {
        self.active()
            .into_iter()
            .map(|k| CategoryEntry {
                id: k.category_id(),
                name: k.name().to_string(),
                split: if self.base_cats.contains(&k) {
                    CategorySplit::Base
                } else {
                    CategorySplit::Novel
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub train: usize,
    pub val: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplits {
    pub base: Vec<String>,
    pub novel: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub counts: ManifestCounts,
    pub splits: ManifestSplits,
    pub height: usize,
    pub width: usize,
    pub generator_version: String,
}

struct Scene {
    image: RgbImage,
    instances: Vec<(ShapeSpec, BinaryMask)>,
    background: Background,
}

fn place_instance(rng: &mut ChaCha8Rng, kind: ShapeKind, h: usize, w: usize) -> Option<ShapeSpec> {
    let side = h.min(w) as f64;
    let texture = sample_texture(rng);
    let base_color = sample_color(rng);
    let scale = rng.gen_range((0.18 * side).max(MIN_SCALE)..0.42 * side);
    let rotation = rng.gen_range(0.0..2.0 * PI);
    let spec = ShapeSpec {
        category: kind,
        center: (0.0, 0.0),
        scale,
        rotation,
        texture,
        base_color,
    };
    let r = spec.circumradius() + MARGIN;
    if 2.0 * r >= side {
        return None;
    }
    let cx = rng.gen_range(r..w as f64 - r);
    let cy = rng.gen_range(r..h as f64 - r);
    Some(ShapeSpec {
        center: (cx, cy),
        ..spec
    })
}

fn overlap_ok(a: &BinaryMask, b: &BinaryMask) -> bool {
    let inter = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|(&p, &q)| p && q)
        .count() as f64;
    inter <= MAX_OVERLAP * a.area().min(b.area()) as f64
}

fn generate_scene(rng: &mut ChaCha8Rng, cats: &[ShapeKind], h: usize, w: usize) -> Scene {
    let background = Background {
        texture: sample_texture(rng),
        base_color: sample_color(rng),
    };
    let n = rng.gen_range(1..=3);
    let mut instances: Vec<(ShapeSpec, BinaryMask)> = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = *cats.choose(rng).expect("non-empty category list");
        for _ in 0..PLACEMENT_ATTEMPTS {
            let Some(spec) = place_instance(rng, kind, h, w) else {
                continue;
            };
            let Ok(mask) = rasterize_shape(&spec, h, w) else {
                continue;
            };
            if mask.is_empty() || !instances.iter().all(|(_, m)| overlap_ok(m, &mask)) {
                continue;
            }
            instances.push((spec, mask));
            break;
        }
    }

    let mut image = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let mut px = background.texture.shade(background.base_color, r, c, h, w);
            for (spec, mask) in &instances {
                if mask.get(r, c) {
                    px = spec.texture.shade(spec.base_color, r, c, h, w);
                }
            }
            image.put_pixel(c as u32, r as u32, Rgb(px.map(|v| (v * 255.0).round() as u8)));
        }
    }

    // Later instances occlude earlier ones.
    for i in 0..instances.len() {
        for j in i + 1..instances.len() {
            let (head, tail) = instances.split_at_mut(j);
            let upper = &tail[0].1;
            let lower = &mut head[i].1;
            for r in 0..h {
                for c in 0..w {
                    if upper.get(r, c) {
                        lower.set(r, c, false);
                    }
                }
            }
        }
    }

    Scene {
        image,
        instances,
        background,
    }
}

/// Deterministic in-memory generation. Image `i` (0-based) uses its own
/// ChaCha stream derived from `(seed, i)`, so images can be built in any
/// order or in parallel.
pub fn generate_samples(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let cats = config.active();
    let total = config.n_train + config.n_val;
    let scenes: Vec<Scene> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            generate_scene(&mut rng, &cats, config.height, config.width)
        })
        .collect();

    let mut next_ann = 1u64;
    let samples = scenes
        .into_iter()
        .enumerate()
        .map(|(i, scene)| {
            let image_id = i as u64 + 1;
            let instances = scene
                .instances
                .into_iter()
                .map(|(spec, mask)| {
                    let bbox = mask.tight_box().expect("visible masks are non-empty");
                    let inst = Instance {
                        annotation_id: next_ann,
                        category_id: spec.category.category_id(),
                        mask,
                        bbox,
                        shape: Some(spec),
                    };
                    next_ann += 1;
                    inst
                })
                .collect();
            SceneSample {
                image_id,
                file_name: format!("images/{image_id:06}.png"),
                split: if i < config.n_train {
                    ImageSplit::Train
                } else {
                    ImageSplit::Val
                },
                image: scene.image,
                instances,
                background: Some(scene.background),
            }
        })
        .collect();
    Ok(Dataset {
        categories: config.categories(),
        samples,
    })
}

/// Generate and write `images/*.png`, `annotations.json` and `manifest.json`.
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    let dataset = generate_samples(config)?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    dataset
        .samples
        .par_iter()
        .try_for_each(|s| -> Result<()> {
            let path = out_dir.join(&s.file_name);
            s.image.save(&path)?;
            Ok(())
        })?;

    let annotations = AnnotationFile::from_dataset(&dataset);
    write_annotation_file(&annotations, &out_dir.join("annotations.json"))?;

    let manifest = Manifest {
        seed: config.seed,
        counts: ManifestCounts {
            train: config.n_train,
            val: config.n_val,
            annotations: annotations.annotations.len(),
        },
        splits: ManifestSplits {
            base: config.base_cats.iter().map(|k| k.name().to_string()).collect(),
            novel: config.novel_cats.iter().map(|k| k.name().to_string()).collect(),
        },
        height: config.height,
        width: config.width,
        generator_version: GENERATOR_VERSION.to_string(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskops::mask_iou;
    use std::collections::HashMap;

    fn small(n_train: usize, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            n_train,
            n_val: 0,
            ..GenConfig::default()
        }
    }

    #[test]
    fn rejects_bad_category_lists() {
        let mut c = small(1, 0);
        c.novel_cats.clear();
        assert!(generate_samples(&c).is_err());
        let mut c = small(1, 0);
        c.novel_cats.push(ShapeKind::Square);
        assert!(generate_samples(&c).is_err());
    }

    #[test]
    fn scene_invariants_hold() {
        let ds = generate_samples(&small(150, 4)).unwrap();
        assert_eq!(ds.samples.len(), 150);
        for s in &ds.samples {
            assert!((1..=3).contains(&s.instances.len()));
            for inst in &s.instances {
                assert!(!inst.mask.is_empty());
                assert_eq!(inst.mask.tight_box().unwrap(), inst.bbox);
            }
            for (i, a) in s.instances.iter().enumerate() {
                for b in &s.instances[i + 1..] {
                    assert!(mask_iou(&a.mask, &b.mask).unwrap() <= 0.2);
                }
            }
        }
    }

    #[test]
    fn category_histogram_is_near_uniform() {
        let ds = generate_samples(&small(1000, 17)).unwrap();
        let mut hist: HashMap<u32, usize> = HashMap::new();
        let mut total = 0;
        for inst in ds.samples.iter().flat_map(|s| &s.instances) {
            *hist.entry(inst.category_id).or_default() += 1;
            total += 1;
        }
        assert_eq!(hist.len(), 6);
        let uniform = total as f64 / 6.0;
        for (&cat, &n) in &hist {
            let rel = (n as f64 - uniform).abs() / uniform;
            assert!(rel <= 0.2, "category {cat}: {n} vs {uniform:.1}");
        }
    }

    #[test]
    fn textures_match_across_splits() {
        let ds = generate_samples(&small(1000, 23)).unwrap();
        let mut base: HashMap<_, f64> = HashMap::new();
        let mut novel: HashMap<_, f64> = HashMap::new();
        let (mut nb, mut nn) = (0.0, 0.0);
        for inst in ds.samples.iter().flat_map(|s| &s.instances) {
            let kind = inst.shape.as_ref().unwrap().texture.kind();
            if ds.is_novel(inst.category_id) {
                *novel.entry(kind).or_default() += 1.0;
                nn += 1.0;
            } else {
                *base.entry(kind).or_default() += 1.0;
                nb += 1.0;
            }
        }
        let kinds: std::collections::BTreeSet<_> = base.keys().chain(novel.keys()).copied().collect();
        let tv: f64 = kinds
            .iter()
            .map(|k| (base.get(k).unwrap_or(&0.0) / nb - novel.get(k).unwrap_or(&0.0) / nn).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.05, "total variation {tv}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_samples(&small(20, 99)).unwrap();
        let b = generate_samples(&small(20, 99)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.instances.len(), y.instances.len());
        }
    }
}

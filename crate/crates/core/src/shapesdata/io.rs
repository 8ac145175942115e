//! COCO-style annotation JSON.
//!
//! ```text
//! images:      [{id, file_name, height, width, split?, background?}]
//! annotations: [{id, image_id, category_id, bbox: [x, y, w, h],
//!                segmentation: {counts: [..], size: [h, w]}, shape?}]
//! categories:  [{id, name, split: "base" | "novel"}]
//! ```
//!
//! `split`, `background` and `shape` are optional extensions written by the
//! generator.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shapes::ShapeSpec;
use super::{Background, CategorySplit, Dataset, ImageSplit, Instance, SceneSample};
use crate::error::{Error, Result};
use crate::maskops::{decode_rle, encode_rle, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<ImageSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub counts: Vec<u32>,
    pub size: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub segmentation: Segmentation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub id: u32,
    pub name: String,
    pub split: CategorySplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
    pub categories: Vec<CategoryEntry>,
}

impl AnnotationFile {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let images = ds
            .samples
            .iter()
            .map(|s| ImageEntry {
                id: s.image_id,
                file_name: s.file_name.clone(),
                height: s.height(),
                width: s.width(),
                split: Some(s.split),
                background: s.background.clone(),
            })
            .collect();
        let annotations = ds
            .samples
            .iter()
            .flat_map(|s| {
                s.instances.iter().map(move |inst| {
                    let rle = encode_rle(&inst.mask);
                    AnnotationEntry {
                        id: inst.annotation_id,
                        image_id: s.image_id,
                        category_id: inst.category_id,
                        bbox: inst.bbox.as_xywh(),
                        segmentation: Segmentation {
                            counts: rle.counts,
                            size: rle.size,
                        },
                        shape: inst.shape.clone(),
                    }
                })
            })
            .collect();
        AnnotationFile {
            images,
            annotations,
            categories: ds.categories.clone(),
        }
    }
}

pub(crate) fn write_annotation_file(file: &AnnotationFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string(file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Largest allowed gap between a stored box and the mask's tight box.
const BOX_TOLERANCE: f64 = 1.0;

/// Load `annotations.json` and the referenced PNGs from `dir`, validating
/// every annotation against its decoded mask.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("annotations.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)?;

    let mut by_image: HashMap<u64, Vec<&AnnotationEntry>> = HashMap::new();
    for ann in &file.annotations {
        by_image.entry(ann.image_id).or_default().push(ann);
    }
    let known_images: std::collections::HashSet<u64> = file.images.iter().map(|i| i.id).collect();
    if let Some(orphan) = file.annotations.iter().find(|a| !known_images.contains(&a.image_id)) {
        return Err(Error::Validation {
            annotation_id: orphan.id,
            reason: format!("refers to unknown image {}", orphan.image_id),
        });
    }

    let mut samples = Vec::with_capacity(file.images.len());
    for entry in &file.images {
        let img_path = dir.join(&entry.file_name);
        let image = image::open(&img_path)
            .map_err(|e| Error::Load {
                image_id: entry.id,
                reason: format!("{}: {e}", img_path.display()),
            })?
            .to_rgb8();
        if image.height() as usize != entry.height || image.width() as usize != entry.width {
            return Err(Error::Load {
                image_id: entry.id,
                reason: format!(
                    "image is {}x{}, annotation says {}x{}",
                    image.height(),
                    image.width(),
                    entry.height,
                    entry.width
                ),
            });
        }

        let mut instances = Vec::new();
        for ann in by_image.get(&entry.id).map(Vec::as_slice).unwrap_or_default() {
            instances.push(load_instance(ann, entry, &file.categories)?);
        }
        samples.push(SceneSample {
            image_id: entry.id,
            file_name: entry.file_name.clone(),
            split: entry.split.unwrap_or(ImageSplit::Train),
            image,
            instances,
            background: entry.background.clone(),
        });
    }
    Ok(Dataset {
        categories: file.categories,
        samples,
    })
}

fn load_instance(ann: &AnnotationEntry, image: &ImageEntry, categories: &[CategoryEntry]) -> Result<Instance> {
    let invalid = |reason: String| Error::Validation {
        annotation_id: ann.id,
        reason,
    };
    if !categories.iter().any(|c| c.id == ann.category_id) {
        return Err(invalid(format!("unknown category {}", ann.category_id)));
    }
    let [h, w] = ann.segmentation.size;
    if h != image.height || w != image.width {
        return Err(invalid(format!(
            "segmentation size {h}x{w} differs from image {}x{}",
            image.height, image.width
        )));
    }
    let mask = decode_rle(&ann.segmentation.counts, h, w).map_err(|e| match e {
        Error::MalformedAnnotation { reason, .. } => Error::MalformedAnnotation { id: ann.id, reason },
        other => other,
    })?;
    let [x, y, bw, bh] = ann.bbox;
    let bbox = BBox::new(x, y, bw, bh).map_err(|e| invalid(e.to_string()))?;
    let tight = mask.tight_box().ok_or_else(|| invalid("mask is empty".into()))?;
    let gaps = [
        bbox.x - tight.x,
        bbox.y - tight.y,
        bbox.x2() - tight.x2(),
        bbox.y2() - tight.y2(),
    ];
    if gaps.iter().any(|g| g.abs() > BOX_TOLERANCE) {
        return Err(invalid(format!(
            "bbox {:?} differs from mask bounds {:?} by more than {BOX_TOLERANCE} px",
            ann.bbox,
            tight.as_xywh()
        )));
    }
    Ok(Instance {
        annotation_id: ann.id,
        category_id: ann.category_id,
        mask,
        bbox,
        shape: ann.shape.clone(),
    })
}

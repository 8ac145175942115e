//! Synthetic shapes benchmark with base / novel category splits.
//!
//! Instances and backgrounds draw textures from one shared sampler, so
//! appearance statistics are identical across the two splits and only the
//! shape families differ.

mod generate;
mod io;
mod shapes;
mod texture;

pub use generate::{generate_dataset, generate_samples, GenConfig, Manifest, GENERATOR_VERSION};
pub use io::{
    load_dataset, AnnotationEntry, AnnotationFile, CategoryEntry, ImageEntry, Segmentation,
};
pub use shapes::{rasterize_shape, ShapeKind, ShapeSpec, MARGIN, MIN_SCALE};
pub use texture::{sample_color, sample_texture, Texture, TextureKind};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::maskops::{BBox, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySplit {
    Base,
    Novel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSplit {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub texture: Texture,
    pub base_color: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub annotation_id: u64,
    pub category_id: u32,
    /// Visible mask at image resolution.
    pub mask: BinaryMask,
    pub bbox: BBox,
    /// Generator parameters, when the annotation carries them.
    pub shape: Option<ShapeSpec>,
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub image_id: u64,
    pub file_name: String,
    pub split: ImageSplit,
    pub image: RgbImage,
    pub instances: Vec<Instance>,
    pub background: Option<Background>,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }
}

/// A loaded or freshly generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub categories: Vec<CategoryEntry>,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    pub fn category(&self, id: u32) -> Option<&CategoryEntry> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn category_split(&self, id: u32) -> Option<CategorySplit> {
        self.category(id).map(|c| c.split)
    }

    pub fn is_novel(&self, category_id: u32) -> bool {
        self.category_split(category_id) == Some(CategorySplit::Novel)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SceneSample> {
        self.samples.iter()
    }

    pub fn split(&self, split: ImageSplit) -> impl Iterator<Item = &SceneSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn find(&self, image_id: u64) -> Option<&SceneSample> {
        self.samples.iter().find(|s| s.image_id == image_id)
    }

    /// Copy holding only samples of one image split.
    pub fn subset(&self, split: ImageSplit) -> Dataset {
        Dataset {
            categories: self.categories.clone(),
            samples: self.split(split).cloned().collect(),
        }
    }

    pub fn categories_in(&self, split: CategorySplit) -> Vec<u32> {
        self.categories
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.id)
            .collect()
    }
}

//! Hyperspectral cubes, label maps, patch datasets and accuracy metrics.

mod container;
mod fixture;
mod metrics;
mod patches;

pub use container::{container_paths, header_text, load_cube, write_cube, HEADER_EXT, LABELS_EXT, PAYLOAD_EXT};
pub use fixture::{generate_fixture, FixtureSpec};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
pub use patches::{
    extract_patches, patch_at, split, split_indices, Normalizer, Patch, PatchDataset, SplitIndices, SplitSpec,
};

use crate::error::{Error, Result};

/// Band-interleaved-by-pixel cube: value `(r, c, b)` sits at `(r·W + c)·B + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub values: Vec<f64>,
    pub wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    pub fn new(name: impl Into<String>, height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::dim("cube extents must be positive"));
        }
        if values.len() != height * width * bands {
            return Err(Error::dim(format!(
                "{height}x{width}x{bands} cube needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube value {i}")));
        }
        Ok(HsiCube {
            name: name.into(),
            height,
            width,
            bands,
            values,
            wavelengths: None,
        })
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let at = (r * self.width + c) * self.bands;
        &self.values[at..at + self.bands]
    }
}

/// Per-pixel class labels; 0 marks an unlabelled pixel, classes are `1..=classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&m) = labels.iter().find(|&&l| l as usize > classes) {
            return Err(Error::Usage(format!("label {m} exceeds class count {classes}")));
        }
        Ok(LabelMap {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.labels[r * self.width + c]
    }

    pub fn labelled(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

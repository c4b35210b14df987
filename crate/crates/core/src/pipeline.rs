//! Cube to normalised train/val/test patch sets.

use crate::data::{extract_patches, split, HsiCube, LabelMap, Normalizer, PatchDataset, SplitSpec};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: PatchDataset,
    pub val: PatchDataset,
    pub test: PatchDataset,
    pub normalizer: Normalizer,
}

/// Extracts `patch × patch` windows, splits them per class and min-max scales
/// every part with statistics from the training part.
pub fn prepare(cube: &HsiCube, labels: &LabelMap, patch: usize, spec: &SplitSpec) -> Result<Prepared> {
    let ds = extract_patches(cube, labels, patch)?;
    let (train, val, test) = split(&ds, spec)?;
    let normalizer = Normalizer::fit(&train)?;
    Ok(Prepared {
        train: normalizer.apply(&train),
        val: normalizer.apply(&val),
        test: normalizer.apply(&test),
        normalizer,
    })
}

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// `[n, n, bands]`
    pub data: Tensor,
    /// Class label in `1..=classes`.
    pub label: u16,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<Patch>,
    pub size: usize,
    pub bands: usize,
    pub classes: usize,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> PatchDataset {
        PatchDataset {
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            size: self.size,
            bands: self.bands,
            classes: self.classes,
        }
    }

    /// Samples per class, index 0 for class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for p in &self.patches {
            c[p.label as usize - 1] += 1;
        }
        c
    }
}

/// Reflects an out-of-range coordinate back into `0..n` without repeating the
/// edge sample, folding as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// The `n × n × bands` window centred on `(row, col)`, mirror-padded at borders.
pub fn patch_at(cube: &HsiCube, row: usize, col: usize, n: usize) -> Result<Tensor> {
    if n % 2 == 0 {
        return Err(Error::Usage(format!("patch size {n} is even; the centre pixel is undefined")));
    }
    if row >= cube.height || col >= cube.width {
        return Err(Error::Usage(format!("pixel ({row}, {col}) outside the cube")));
    }
    let half = (n / 2) as isize;
    let mut data = Vec::with_capacity(n * n * cube.bands);
    for dr in -half..=half {
        let r = reflect(row as isize + dr, cube.height);
        for dc in -half..=half {
            let c = reflect(col as isize + dc, cube.width);
            data.extend_from_slice(cube.pixel(r, c));
        }
    }
    Ok(Tensor::from_parts(vec![n, n, cube.bands], data))
}

/// One patch per labelled pixel, in row-major pixel order.
pub fn extract_patches(cube: &HsiCube, labels: &LabelMap, n: usize) -> Result<PatchDataset> {
    if n % 2 == 0 {
        return Err(Error::Usage(format!("patch size {n} is even; the centre pixel is undefined")));
    }
    if (labels.height, labels.width) != (cube.height, cube.width) {
        return Err(Error::dim("label map and cube sizes differ"));
    }
    let mut patches = Vec::new();
    for row in 0..cube.height {
        for col in 0..cube.width {
            let label = labels.get(row, col);
            if label != 0 {
                patches.push(Patch {
                    data: patch_at(cube, row, col, n)?,
                    label,
                    row,
                    col,
                });
            }
        }
    }
    Ok(PatchDataset {
        patches,
        size: n,
        bands: cube.bands,
        classes: labels.classes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

/// Dataset positions of each part of a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split. Each class contributes `max(1, round(f_train·count))`
/// training and `round(f_val·count)` validation samples, drawn after one
/// seeded shuffle per class; the rest is test.
pub fn split_indices(ds: &PatchDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    let valid = |f: f64| f > 0.0 && f < 1.0;
    if !valid(spec.train_fraction) || !valid(spec.val_fraction) || spec.train_fraction + spec.val_fraction >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions {} + {} must lie in (0, 1) and sum below 1",
            spec.train_fraction, spec.val_fraction
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, p) in ds.patches.iter().enumerate() {
        by_class[p.label as usize - 1].push(i);
    }
    let mut rng = seeded(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter_mut().enumerate() {
        let count = members.len();
        if count == 0 {
            return Err(Error::Config(format!("class {} has no labelled samples", c + 1)));
        }
        shuffle(members, &mut rng);
        let n_train = ((spec.train_fraction * count as f64).round() as usize).max(1);
        let n_val = ((spec.val_fraction * count as f64).round() as usize).min(count - n_train);
        out.train.extend(&members[..n_train]);
        out.val.extend(&members[n_train..n_train + n_val]);
        out.test.extend(&members[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(ds: &PatchDataset, spec: &SplitSpec) -> Result<(PatchDataset, PatchDataset, PatchDataset)> {
    let idx = split_indices(ds, spec)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.val), ds.subset(&idx.test)))
}

/// Per-band min-max scaling fitted on one dataset (the training split).
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &PatchDataset) -> Result<Normalizer> {
        if train.is_empty() {
            return Err(Error::Usage("cannot fit normalisation on an empty split".into()));
        }
        let b = train.bands;
        let mut min = vec![f64::INFINITY; b];
        let mut max = vec![f64::NEG_INFINITY; b];
        for p in &train.patches {
            for px in p.data.data().chunks_exact(b) {
                for (k, &v) in px.iter().enumerate() {
                    min[k] = min[k].min(v);
                    max[k] = max[k].max(v);
                }
            }
        }
        Ok(Normalizer { min, max })
    }

    /// `(x − min)/(max − min)` per band; bands constant on the fit data map to 0.
    pub fn apply_tensor(&self, t: &Tensor) -> Tensor {
        let b = self.min.len();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = i % b;
                let range = self.max[k] - self.min[k];
                if range > 0.0 {
                    (v - self.min[k]) / range
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::from_parts(t.shape().to_vec(), data)
    }

    pub fn apply(&self, ds: &PatchDataset) -> PatchDataset {
        PatchDataset {
            patches: ds
                .patches
                .iter()
                .map(|p| Patch {
                    data: self.apply_tensor(&p.data),
                    ..p.clone()
                })
                .collect(),
            ..ds.clone()
        }
    }
}

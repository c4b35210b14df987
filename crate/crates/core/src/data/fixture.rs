//! Synthetic separable scenes: Voronoi class regions, one Gaussian spectral
//! bump per class, additive noise and a sprinkling of unlabelled pixels.

use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::rng::{below, derive_seed, seeded, unit};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixtureSpec {
    pub classes: usize,
    pub size: usize,
    pub bands: usize,
    pub seed: u64,
    /// Regions per class.
    pub regions: usize,
    pub noise: f64,
    pub unlabelled_fraction: f64,
}

impl FixtureSpec {
    pub fn new(classes: usize, size: usize, bands: usize, seed: u64) -> Self {
        FixtureSpec {
            classes,
            size,
            bands,
            seed,
            regions: 2,
            noise: 0.05,
            unlabelled_fraction: 0.1,
        }
    }

    /// Noise-free spectrum of class `c` (1-based).
    pub fn class_spectrum(&self, c: usize) -> Vec<f64> {
        let centre = (c as f64 - 0.5) / self.classes as f64 * self.bands as f64;
        let width = (self.bands as f64 / (2.0 * self.classes as f64)).max(1.0);
        (0..self.bands)
            .map(|b| 0.2 + (-((b as f64 + 0.5 - centre) / width).powi(2) / 2.0).exp())
            .collect()
    }
}

pub fn generate_fixture(spec: &FixtureSpec) -> Result<(HsiCube, LabelMap)> {
    if spec.classes == 0 || spec.classes > u16::MAX as usize || spec.size == 0 || spec.bands == 0 || spec.regions == 0 {
        return Err(Error::Config("fixture needs positive classes, size, bands and regions".into()));
    }
    if spec.size * spec.size < spec.classes * spec.regions {
        return Err(Error::Config(format!(
            "a {0}x{0} scene cannot hold {1} classes",
            spec.size, spec.classes
        )));
    }
    let n = spec.size;
    let mut rng = seeded(derive_seed(spec.seed, "fixture"));

    // distinct pixel centres, region k belongs to class k mod C
    let mut centres: Vec<(usize, usize)> = Vec::new();
    while centres.len() < spec.classes * spec.regions {
        let p = (below(&mut rng, n), below(&mut rng, n));
        if !centres.contains(&p) {
            centres.push(p);
        }
    }
    let spectra: Vec<Vec<f64>> = (1..=spec.classes).map(|c| spec.class_spectrum(c)).collect();
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut values = Vec::with_capacity(n * n * spec.bands);
    let mut labels = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let nearest = centres
                .iter()
                .enumerate()
                .min_by_key(|(_, &(cr, cc))| {
                    let dr = cr as i64 - r as i64;
                    let dc = cc as i64 - c as i64;
                    dr * dr + dc * dc
                })
                .map(|(k, _)| k)
                .expect("at least one centre");
            let class = nearest % spec.classes;
            for &s in &spectra[class] {
                values.push((s + noise.sample(&mut rng)) as f32 as f64);
            }
            let unlabelled = unit(&mut rng) < spec.unlabelled_fraction;
            labels.push(if unlabelled { 0 } else { class as u16 + 1 });
        }
    }
    let cube = HsiCube::new(format!("fixture-{}", spec.seed), n, n, spec.bands, values)?;
    let labels = LabelMap::new(n, n, spec.classes, labels)?;
    Ok((cube, labels))
}

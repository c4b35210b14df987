use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Counts of true class `i` predicted as `j` (0-based classes).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.classes, self.classes],
            self.counts.iter().map(|&c| c as f64).collect(),
        )
    }

    pub fn metrics(&self) -> Result<Metrics> {
        metrics(&self.to_tensor())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// Recall per true class; `None` for classes without samples.
    pub recalls: Vec<Option<f64>>,
}

pub fn metrics(confusion: &Tensor) -> Result<Metrics> {
    let s = confusion.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::dim(format!("confusion matrix must be square, got {s:?}")));
    }
    let c = s[0];
    let m = confusion.data();
    if m.iter().any(|&v| v < 0.0) {
        return Err(Error::Usage("confusion counts must be non-negative".into()));
    }
    let total: f64 = m.iter().sum();
    if total == 0.0 {
        return Err(Error::Usage("confusion matrix is empty".into()));
    }
    let row = |i: usize| m[i * c..(i + 1) * c].iter().sum::<f64>();
    let col = |j: usize| (0..c).map(|i| m[i * c + j]).sum::<f64>();
    let trace: f64 = (0..c).map(|i| m[i * c + i]).sum();
    let oa = trace / total;
    let recalls: Vec<Option<f64>> = (0..c)
        .map(|i| {
            let r = row(i);
            (r > 0.0).then(|| m[i * c + i] / r)
        })
        .collect();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..c).map(|i| row(i) * col(i)).sum::<f64>() / (total * total);
    // pe == 1 means every sample is one class, both true and predicted
    let kappa = if pe >= 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(Metrics {
        overall_accuracy: oa,
        average_accuracy: aa,
        kappa,
        recalls,
    })
}

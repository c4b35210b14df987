//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates the forward closure on perturbed
//! copies of the inputs, so it shares nothing with the backward kernels it
//! checks.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extra central differences, each with a tenth of the previous step, tried
/// when the configured step disagrees with the analytic gradient.
const REFINEMENTS: usize = 2;

/// One-sided slope gap below which rounding, not a kink, explains it.
const KINK_MIN_GAP: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink (relu, max) where the one-sided slopes
    /// differ; the finite difference is meaningless there.
    pub nonsmooth: usize,
    /// `(input, element, analytic, numeric)` of the worst smooth coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, cfg: &GradCheckConfig) -> bool {
        self.max_rel_error <= cfg.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares `∂f/∂inputs` from [`Tape::backward`] against central differences
/// for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Usage("gradient check needs a scalar function".into()));
    }
    tape.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, &v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(v)
            .unwrap_or_else(|| Tensor::zeros(inputs[ii].shape()));
        for e in 0..inputs[ii].len() {
            let base = inputs[ii].data()[e];
            let mut at = |h: f64| -> Result<f64> {
                work[ii].data_mut()[e] = base + h;
                let v = evaluate(&f, &work);
                work[ii].data_mut()[e] = base;
                v
            };
            let (plus, minus) = (at(cfg.step)?, at(-cfg.step)?);
            let a = analytic.data()[e];
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            let (mut err, mut numeric) = (err, numeric);
            if err > cfg.tolerance {
                // a kink within one step of the point spoils the coarse
                // difference; smaller steps step around it
                let mut h = cfg.step;
                for _ in 0..REFINEMENTS {
                    h /= 10.0;
                    let n = (at(h)? - at(-h)?) / (2.0 * h);
                    let e = relative_error(a, n, cfg.floor);
                    if e < err {
                        (err, numeric) = (e, n);
                    }
                }
            }
            if err > cfg.tolerance {
                // on the kink itself the one-sided slopes stay apart as the
                // step shrinks, and a valid subgradient lies between them
                let centre = at(0.0)?;
                let mut slopes = |h: f64| -> Result<(f64, f64)> { Ok(((at(h)? - centre) / h, (centre - at(-h)?) / h)) };
                let fine = cfg.step / 10f64.powi(REFINEMENTS as i32);
                let (f1, b1) = slopes(fine * 10.0)?;
                let (f2, b2) = slopes(fine)?;
                let (gap1, gap2) = ((f1 - b1).abs(), (f2 - b2).abs());
                let slack = cfg.tolerance * a.abs().max(cfg.floor);
                let between = a >= f2.min(b2) - slack && a <= f2.max(b2) + slack;
                if gap2 > KINK_MIN_GAP && gap2 > 0.5 * gap1 && between {
                    report.nonsmooth += 1;
                    continue;
                }
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ii, e, a, numeric));
            }
        }
    }
    Ok(report)
}

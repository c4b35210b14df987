//! Multi-scale routing: pyramid fusion of prediction tensors, a fixed
//! shuffle, sliding-window partial connection and self-attention coupling.
//!
//! Given `2p` capsules, the pyramid repeatedly merges adjacent pairs with one
//! shared weight pair per level until two tensors remain; all levels after the
//! input are concatenated (`M = 2p − 2` tensors). After a seeded permutation,
//! high-level capsule `j` reads the `I` tensors starting at
//! `min(a·j, M − I)` with `a = ⌊2p / J⌋`, couples them with scaled dot-product
//! attention and averages the attended votes. No squashing is applied.

use crate::autodiff::{Tape, Var};
use crate::capsules::CapsuleSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Number of pyramid levels above the input for `two_p` capsules.
pub fn pyramid_levels(two_p: usize) -> Result<usize> {
    if two_p < 4 || !two_p.is_power_of_two() {
        return Err(Error::Config(format!(
            "pyramid fusion needs a power-of-two capsule count of at least 4, got {two_p}"
        )));
    }
    Ok(two_p.trailing_zeros() as usize - 1)
}

/// Tensors produced by the pyramid for `two_p` inputs.
pub fn pyramid_output_count(two_p: usize) -> Result<usize> {
    pyramid_levels(two_p).map(|_| two_p - 2)
}

/// One shared `(w₁, w₂)` pair of `N_c × N_c` matrices per pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidWeights {
    pub levels: Vec<(Tensor, Tensor)>,
}

pub fn pyramid_fusion_var(tape: &mut Tape, u: Var, levels: &[(Var, Var)]) -> Result<Var> {
    let s = tape.shape(u).to_vec();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::dim(format!("expected [2p, N_c, N_c], got {s:?}")));
    }
    let (two_p, nc) = (s[0], s[1]);
    let expected = pyramid_levels(two_p)?;
    if levels.len() != expected {
        return Err(Error::Config(format!(
            "{two_p} capsules need {expected} pyramid weight pairs, got {}",
            levels.len()
        )));
    }
    for &(w1, w2) in levels {
        if tape.shape(w1) != [nc, nc] || tape.shape(w2) != [nc, nc] {
            return Err(Error::dim("pyramid weights must be N_c x N_c"));
        }
    }
    let mut current: Vec<Var> = (0..two_p)
        .map(|i| {
            let c = tape.slice(u, i, 1)?;
            tape.reshape(c, &[nc, nc])
        })
        .collect::<Result<_>>()?;
    let mut outputs = Vec::with_capacity(two_p - 2);
    for &(w1, w2) in levels {
        let mut next = Vec::with_capacity(current.len() / 2);
        for pair in current.chunks(2) {
            let a = tape.matmul(w1, pair[0])?;
            let b = tape.matmul(w2, pair[1])?;
            next.push(tape.add(a, b)?);
        }
        for &t in &next {
            outputs.push(tape.reshape(t, &[1, nc, nc])?);
        }
        current = next;
    }
    tape.concat(&outputs, 0)
}

pub fn pyramid_fusion(prev: &CapsuleSet, weights: &PyramidWeights) -> Result<CapsuleSet> {
    let mut tape = Tape::new();
    let u = tape.constant(prev.stacked().clone());
    let levels: Vec<(Var, Var)> = weights
        .levels
        .iter()
        .map(|(a, b)| (tape.constant(a.clone()), tape.constant(b.clone())))
        .collect();
    let out = pyramid_fusion_var(&mut tape, u, &levels)?;
    CapsuleSet::from_stacked(tape.value(out).clone(), prev.layer_index)
}

/// Reorders capsules by the seeded permutation of [`rng::permutation`].
pub fn shuffle(set: &CapsuleSet, seed: u64) -> CapsuleSet {
    let perm = rng::permutation(set.len(), seed);
    let tensors: Vec<Tensor> = perm.iter().map(|&i| set.get(i)).collect();
    CapsuleSet::new(&tensors, set.layer_index).expect("permutation keeps shapes")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub two_p: usize,
    pub available: usize,
    pub outputs: usize,
    pub window: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    pub fn indices(&self, j: usize) -> std::ops::Range<usize> {
        self.starts[j]..self.starts[j] + self.window
    }

    /// Prediction tensors read in total across all windows.
    pub fn connections(&self) -> usize {
        self.outputs * self.window
    }
}

/// Window layout for `outputs` high-level capsules over `available` tensors;
/// the stride comes from the nominal capsule count `two_p`.
pub fn plan_windows(two_p: usize, available: usize, outputs: usize, window: usize) -> Result<WindowPlan> {
    if outputs == 0 || window == 0 {
        return Err(Error::Config("window length and output count must be positive".into()));
    }
    if window > available {
        return Err(Error::Config(format!(
            "window length {window} exceeds the {available} available prediction tensors"
        )));
    }
    let stride = two_p / outputs;
    let last = available - window;
    let starts = (0..outputs).map(|j| (stride * j).min(last)).collect();
    Ok(WindowPlan {
        two_p,
        available,
        outputs,
        window,
        stride,
        starts,
    })
}

/// Query and key projections for one high-level capsule, each `D × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: Tensor,
    pub key: Tensor,
}

/// Row-stochastic `[I, I]` coupling for a window given as `[I, D]` rows.
pub fn attention_coupling_var(tape: &mut Tape, window: Var, query: Var, key: Var, nc: usize) -> Result<Var> {
    let q = tape.matmul(window, query)?;
    let k = tape.matmul(window, key)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (nc as f64).sqrt())?;
    tape.softmax(scores, 1)
}

/// Mean of the attended votes `C · Ū`, as a `[1, D]` row.
pub fn aggregate_votes_var(tape: &mut Tape, coupling: Var, window: Var) -> Result<Var> {
    let votes = tape.matmul(coupling, window)?;
    let mean = tape.reduce_mean(votes, &[0])?;
    let d = tape.value(mean).len();
    tape.reshape(mean, &[1, d])
}

fn window_rows(set: &CapsuleSet) -> Tensor {
    let d = set.capsule_size().pow(2);
    set.stacked().reshape(&[set.len(), d]).expect("same length")
}

pub fn attention_coupling(window: &CapsuleSet, params: &AttentionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = tape.constant(window_rows(window));
    let q = tape.constant(params.query.clone());
    let k = tape.constant(params.key.clone());
    let c = attention_coupling_var(&mut tape, w, q, k, window.capsule_size())?;
    Ok(tape.value(c).clone())
}

pub fn aggregate_votes(coupling: &Tensor, window: &CapsuleSet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let c = tape.constant(coupling.clone());
    let w = tape.constant(window_rows(window));
    let u = aggregate_votes_var(&mut tape, c, w)?;
    let nc = window.capsule_size();
    tape.value(u).reshape(&[nc, nc])
}

/// Everything one multi-scale routing step needs besides its input.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleParams {
    pub pyramid: PyramidWeights,
    pub permutation: Vec<usize>,
    pub plan: WindowPlan,
    pub attention: Vec<AttentionParams>,
}

/// Tape handles for the learnable parts of one routing step.
pub struct MultiscaleVars<'a> {
    pub pyramid: &'a [(Var, Var)],
    pub attention: &'a [(Var, Var)],
    pub permutation: &'a [usize],
    pub plan: &'a WindowPlan,
}

pub struct MultiscaleTrace {
    pub output: Var,
    pub couplings: Vec<Var>,
}

pub fn multiscale_route_var(tape: &mut Tape, u: Var, p: &MultiscaleVars<'_>) -> Result<MultiscaleTrace> {
    let nc = tape.shape(u)[1];
    let d = nc * nc;
    let fused = pyramid_fusion_var(tape, u, p.pyramid)?;
    let m = tape.shape(fused)[0];
    if p.plan.available != m || p.permutation.len() != m {
        return Err(Error::Config(format!(
            "plan covers {} tensors and permutation {}, pyramid produced {m}",
            p.plan.available,
            p.permutation.len()
        )));
    }
    if p.attention.len() != p.plan.outputs {
        return Err(Error::Config(format!(
            "{} attention parameter sets for {} outputs",
            p.attention.len(),
            p.plan.outputs
        )));
    }
    let rows = tape.reshape(fused, &[m, d])?;
    let mut outputs = Vec::with_capacity(p.plan.outputs);
    let mut couplings = Vec::with_capacity(p.plan.outputs);
    for (j, &(q, k)) in p.attention.iter().enumerate() {
        let picked: Vec<usize> = p.plan.indices(j).map(|s| p.permutation[s]).collect();
        let window = tape.gather(rows, &picked)?;
        let c = attention_coupling_var(tape, window, q, k, nc)?;
        couplings.push(c);
        outputs.push(aggregate_votes_var(tape, c, window)?);
    }
    let out = tape.concat(&outputs, 0)?;
    let output = tape.reshape(out, &[p.plan.outputs, nc, nc])?;
    Ok(MultiscaleTrace { output, couplings })
}

pub fn multiscale_route(prev: &CapsuleSet, params: &MultiscaleParams) -> Result<CapsuleSet> {
    multiscale_route_traced(prev, params).map(|(c, _)| c)
}

/// [`multiscale_route`] plus every window's coupling matrix.
pub fn multiscale_route_traced(prev: &CapsuleSet, params: &MultiscaleParams) -> Result<(CapsuleSet, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let u = tape.constant(prev.stacked().clone());
    let pyramid: Vec<(Var, Var)> = params
        .pyramid
        .levels
        .iter()
        .map(|(a, b)| (tape.constant(a.clone()), tape.constant(b.clone())))
        .collect();
    let attention: Vec<(Var, Var)> = params
        .attention
        .iter()
        .map(|a| (tape.constant(a.query.clone()), tape.constant(a.key.clone())))
        .collect();
    let vars = MultiscaleVars {
        pyramid: &pyramid,
        attention: &attention,
        permutation: &params.permutation,
        plan: &params.plan,
    };
    let trace = multiscale_route_var(&mut tape, u, &vars)?;
    let out = CapsuleSet::from_stacked(tape.value(trace.output).clone(), prev.layer_index + 1)?;
    let cs = trace.couplings.iter().map(|&c| tape.value(c).clone()).collect();
    Ok((out, cs))
}

//! Capsule primitives: squashing, PrimaryCaps, routing-by-agreement,
//! class readout and margin loss.
//!
//! A capsule is an `N_c × N_c` activity tensor. Inner products and norms treat
//! it as a flattened vector of length `D = N_c²`. A layer of `M` capsules is
//! stored stacked as one `[M, N_c, N_c]` tensor.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_CAPSULE_SIZE: usize = 4;

/// Margin-loss upper target for the true class.
pub const MARGIN_POSITIVE: f64 = 0.9;
/// Margin-loss ceiling for every other class.
pub const MARGIN_NEGATIVE: f64 = 0.1;
/// Down-weighting of absent-class terms.
pub const MARGIN_LAMBDA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleSet {
    stacked: Tensor,
    pub layer_index: usize,
}

impl CapsuleSet {
    pub fn new(tensors: &[Tensor], layer_index: usize) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::dim("a capsule set needs at least one capsule"))?;
        let nc = match first.shape() {
            &[a, b] if a == b => a,
            s => return Err(Error::dim(format!("capsules must be square, got {s:?}"))),
        };
        if tensors.iter().any(|t| t.shape() != [nc, nc]) {
            return Err(Error::dim("capsules in one set must share a shape"));
        }
        let data = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        Ok(CapsuleSet {
            stacked: Tensor::new(vec![tensors.len(), nc, nc], data)?,
            layer_index,
        })
    }

    /// Wraps an `[M, N_c, N_c]` tensor.
    pub fn from_stacked(stacked: Tensor, layer_index: usize) -> Result<Self> {
        match stacked.shape() {
            &[_, a, b] if a == b => Ok(CapsuleSet {
                stacked,
                layer_index,
            }),
            s => Err(Error::dim(format!("expected [M, N_c, N_c], got {s:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.stacked.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn capsule_size(&self) -> usize {
        self.stacked.shape()[1]
    }

    pub fn stacked(&self) -> &Tensor {
        &self.stacked
    }

    pub fn get(&self, i: usize) -> Tensor {
        let nc = self.capsule_size();
        let d = nc * nc;
        Tensor::from_parts(vec![nc, nc], self.stacked.data()[i * d..(i + 1) * d].to_vec())
    }

    /// Capsule `i` as a flat slice of length `N_c²`.
    pub fn flat(&self, i: usize) -> &[f64] {
        let d = self.capsule_size().pow(2);
        &self.stacked.data()[i * d..(i + 1) * d]
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Squashes the whole tensor as one vector.
pub fn squash(s: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let flat = tape.constant(s.reshape(&[s.len()]).expect("same length"));
    let v = tape.squash(flat).expect("squash of finite input is finite");
    tape.value(v).reshape(s.shape()).expect("same length")
}

/// Convolution weights mapping a backbone map to the PrimaryCaps grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimaryCapsProjection {
    /// `[kh, kw, K, C_out]`
    pub kernel: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub padding: usize,
}

/// Differentiable PrimaryCaps: one convolution plus bias, then a row-major
/// reshape of the `[h', w', C_out]` output into `[2p, N_c, N_c]`.
pub fn primary_caps_var(
    tape: &mut Tape,
    fm: Var,
    kernel: Var,
    bias: Var,
    padding: usize,
    two_p: usize,
    nc: usize,
) -> Result<Var> {
    let y = tape.conv2d(fm, kernel, 1, padding)?;
    let y = add_channel_bias(tape, y, bias)?;
    if tape.value(y).len() != two_p * nc * nc {
        return Err(Error::Config(format!(
            "primary caps projection yields {:?}, which does not reshape to {two_p} capsules of {nc}x{nc}",
            tape.shape(y)
        )));
    }
    tape.reshape(y, &[two_p, nc, nc])
}

pub fn primary_caps(
    fm: &Tensor,
    proj: &PrimaryCapsProjection,
    two_p: usize,
    nc: usize,
) -> Result<CapsuleSet> {
    let mut tape = Tape::new();
    let x = tape.constant(fm.clone());
    let k = tape.constant(proj.kernel.clone());
    let b = tape.constant(proj.bias.clone());
    let caps = primary_caps_var(&mut tape, x, k, b, proj.padding, two_p, nc)
        .map_err(|e| match e {
            Error::Dimension(m) => Error::Config(m),
            other => other,
        })?;
    CapsuleSet::from_stacked(tape.value(caps).clone(), 0)
}

/// Adds a `[C]` bias to every position of an `[h, w, C]` map by tiling it
/// through a ones-column product.
pub fn add_channel_bias(tape: &mut Tape, y: Var, bias: Var) -> Result<Var> {
    let s = tape.shape(y).to_vec();
    let c = *s.last().unwrap();
    if tape.value(bias).len() != c {
        return Err(Error::dim(format!("bias of {} for {c} channels", tape.value(bias).len())));
    }
    let positions = tape.value(y).len() / c;
    let ones = tape.constant(Tensor::ones(&[positions, 1]));
    let row = tape.reshape(bias, &[1, c])?;
    let tiled = tape.matmul(ones, row)?;
    let tiled = tape.reshape(tiled, &s)?;
    tape.add(y, tiled)
}

/// Per-pair transformation matrices `W_ij` for routing-by-agreement, acting on
/// flattened capsules: `û_{j|i} = W_ij · u_i` with `W_ij` of size `D × D`.
///
/// Stored as `[M_in, D, M_out · D]` where columns `jD..(j+1)D` of slab `i`
/// hold `W_ijᵀ`, so all predictions of capsule `i` are one row-vector product.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingWeights {
    pub packed: Tensor,
    pub inputs: usize,
    pub outputs: usize,
    pub dim: usize,
}

impl RoutingWeights {
    pub fn from_packed(packed: Tensor, outputs: usize) -> Result<Self> {
        let s = packed.shape().to_vec();
        if s.len() != 3 || s[2] != s[1] * outputs {
            return Err(Error::dim(format!("routing weights {s:?} for {outputs} outputs")));
        }
        Ok(RoutingWeights {
            inputs: s[0],
            outputs,
            dim: s[1],
            packed,
        })
    }

    /// Packs `pairs[i][j] = W_ij` (each `D × D`).
    pub fn from_pairs(pairs: &[Vec<Tensor>]) -> Result<Self> {
        let inputs = pairs.len();
        let outputs = pairs.first().map_or(0, Vec::len);
        let d = pairs
            .first()
            .and_then(|r| r.first())
            .map(|t| t.shape()[0])
            .ok_or_else(|| Error::dim("empty routing weights"))?;
        let mut packed = Tensor::zeros(&[inputs, d, outputs * d]);
        for (i, row) in pairs.iter().enumerate() {
            if row.len() != outputs {
                return Err(Error::dim("ragged routing weights"));
            }
            for (j, w) in row.iter().enumerate() {
                if w.shape() != [d, d] {
                    return Err(Error::dim("routing matrices must be D x D"));
                }
                for r in 0..d {
                    for c in 0..d {
                        packed.set(&[i, c, j * d + r], w.at(&[r, c]));
                    }
                }
            }
        }
        Self::from_packed(packed, outputs)
    }

    /// `W_ij` as a `D × D` matrix.
    pub fn pair(&self, i: usize, j: usize) -> Tensor {
        let d = self.dim;
        let mut w = Tensor::zeros(&[d, d]);
        for r in 0..d {
            for c in 0..d {
                w.set(&[r, c], self.packed.at(&[i, c, j * d + r]));
            }
        }
        w
    }
}

/// Tape handles produced by [`dynamic_routing_var`].
pub struct RoutingTrace {
    pub output: Var,
    /// Coupling matrix `[M_in, M_out]` used at each iteration.
    pub couplings: Vec<Var>,
}

/// Routing-by-agreement. `u` is `[M_in, N_c, N_c]`, `w` is packed as in
/// [`RoutingWeights`]. Log priors start at zero; each iteration couples with
/// a softmax over output capsules, squashes the weighted sums, and (except
/// after the last iteration, whose update would be unused) adds the
/// agreement `⟨u_j, û_{j|i}⟩` to the priors.
pub fn dynamic_routing_var(
    tape: &mut Tape,
    u: Var,
    w: Var,
    outputs: usize,
    iterations: usize,
) -> Result<RoutingTrace> {
    if iterations == 0 {
        return Err(Error::Usage("routing needs at least one iteration".into()));
    }
    let s = tape.shape(u).to_vec();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::dim(format!("expected [M, N_c, N_c], got {s:?}")));
    }
    let (m_in, nc) = (s[0], s[1]);
    let d = nc * nc;
    if tape.shape(w) != [m_in, d, outputs * d] {
        return Err(Error::dim(format!(
            "routing weights {:?} do not match {m_in} inputs, {outputs} outputs, D={d}",
            tape.shape(w)
        )));
    }
    let flat = tape.reshape(u, &[m_in, d])?;
    let mut rows = Vec::with_capacity(m_in);
    for i in 0..m_in {
        let ui = tape.slice(flat, i, 1)?;
        let wi = tape.slice(w, i, 1)?;
        let wi = tape.reshape(wi, &[d, outputs * d])?;
        rows.push(tape.matmul(ui, wi)?);
    }
    let preds = tape.concat(&rows, 0)?;
    let preds = tape.reshape(preds, &[m_in, outputs, d])?;
    // [M_out, M_in, D]: predictions grouped by receiving capsule
    let by_output = tape.permute(preds, &[1, 0, 2])?;
    let per_output: Vec<Var> = (0..outputs)
        .map(|j| {
            let pj = tape.slice(by_output, j, 1)?;
            tape.reshape(pj, &[m_in, d])
        })
        .collect::<Result<_>>()?;

    let mut logits = tape.constant(Tensor::zeros(&[m_in, outputs]));
    let mut couplings = Vec::with_capacity(iterations);
    let mut v = logits;
    for it in 0..iterations {
        let c = tape.softmax(logits, 1)?;
        couplings.push(c);
        let ct = tape.transpose(c)?;
        let mut sums = Vec::with_capacity(outputs);
        for (j, &pj) in per_output.iter().enumerate() {
            let cj = tape.slice(ct, j, 1)?;
            sums.push(tape.matmul(cj, pj)?);
        }
        let s_all = tape.concat(&sums, 0)?;
        v = tape.squash(s_all)?;
        if it + 1 < iterations {
            let mut agreements = Vec::with_capacity(outputs);
            for (j, &pj) in per_output.iter().enumerate() {
                let vj = tape.slice(v, j, 1)?;
                let vj = tape.transpose(vj)?;
                agreements.push(tape.matmul(pj, vj)?);
            }
            let a = tape.concat(&agreements, 1)?;
            logits = tape.add(logits, a)?;
        }
    }
    let output = tape.reshape(v, &[outputs, nc, nc])?;
    Ok(RoutingTrace { output, couplings })
}

pub fn dynamic_routing(
    prev: &CapsuleSet,
    weights: &RoutingWeights,
    iterations: usize,
) -> Result<CapsuleSet> {
    dynamic_routing_traced(prev, weights, iterations).map(|(c, _)| c)
}

/// [`dynamic_routing`] plus the coupling matrix of every iteration.
pub fn dynamic_routing_traced(
    prev: &CapsuleSet,
    weights: &RoutingWeights,
    iterations: usize,
) -> Result<(CapsuleSet, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let u = tape.constant(prev.stacked().clone());
    let w = tape.constant(weights.packed.clone());
    let trace = dynamic_routing_var(&mut tape, u, w, weights.outputs, iterations)?;
    let out = CapsuleSet::from_stacked(tape.value(trace.output).clone(), prev.layer_index + 1)?;
    let couplings = trace.couplings.iter().map(|&c| tape.value(c).clone()).collect();
    Ok((out, couplings))
}

/// Capsule lengths `[C]` of an `[C, N_c, N_c]` class layer.
pub fn lengths_var(tape: &mut Tape, caps: Var) -> Result<Var> {
    let s = tape.shape(caps).to_vec();
    if s.len() != 3 {
        return Err(Error::dim(format!("expected [C, N_c, N_c], got {s:?}")));
    }
    let flat = tape.reshape(caps, &[s[0], s[1] * s[2]])?;
    let n = tape.norm(flat)?;
    tape.reshape(n, &[s[0]])
}

/// Index of the longest capsule; ties go to the lowest index.
pub fn argmax(lengths: &[f64]) -> usize {
    lengths
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
        .0
}

pub fn class_readout(class_caps: &CapsuleSet) -> (Tensor, usize) {
    let lengths: Vec<f64> = (0..class_caps.len())
        .map(|i| class_caps.flat(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let predicted = argmax(&lengths);
    (Tensor::from_parts(vec![lengths.len()], lengths), predicted)
}

/// Margin loss over class lengths `[C]` for a zero-based `true_class`.
pub fn margin_loss_var(tape: &mut Tape, lengths: Var, true_class: usize) -> Result<Var> {
    let c = tape.value(lengths).len();
    if true_class >= c {
        return Err(Error::Usage(format!(
            "true class {true_class} out of range for {c} classes"
        )));
    }
    let mut onehot = Tensor::zeros(&[c]);
    onehot.data_mut()[true_class] = 1.0;
    let absent = onehot.map(|t| MARGIN_LAMBDA * (1.0 - t));
    let lengths = tape.reshape(lengths, &[c])?;
    let present = tape.constant(onehot);
    let absent = tape.constant(absent);

    let short = tape.affine(lengths, -1.0, MARGIN_POSITIVE)?;
    let short = tape.relu(short)?;
    let short = tape.mul(short, short)?;
    let short = tape.mul(short, present)?;

    let long = tape.affine(lengths, 1.0, -MARGIN_NEGATIVE)?;
    let long = tape.relu(long)?;
    let long = tape.mul(long, long)?;
    let long = tape.mul(long, absent)?;

    let total = tape.add(short, long)?;
    tape.sum(total)
}

pub fn margin_loss(lengths: &Tensor, true_class: usize) -> Result<f64> {
    if lengths.data().iter().any(|&l| l < 0.0) {
        return Err(Error::Usage("capsule lengths must be non-negative".into()));
    }
    let mut tape = Tape::new();
    let l = tape.constant(lengths.clone());
    let loss = margin_loss_var(&mut tape, l, true_class)?;
    tape.value(loss).item()
}

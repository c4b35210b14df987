//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node whose inputs are earlier nodes, so the record is always in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Broadcasting is limited to scalar-times-tensor ([`Tape::mul_scalar`]);
//! everything else needs matching shapes.

mod kernels;

pub(crate) use kernels::axis_split;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeom;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Reshape(Var),
    Permute(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    ReduceSum(Var),
    ReduceMax(Var),
    Norm(Var),
    Matmul(Var, Var),
    Softmax(Var, usize),
    Conv2d(Var, Var, ConvGeom),
    Squash(Var),
    Pad2d(Var),
    Haar(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulScalar(a, b) => vec![*a, *b],
            Op::Matmul(a, b) | Op::Conv2d(a, b, _) => vec![*a, *b],
            Op::Concat(xs, _) => xs.clone(),
            Op::Affine(x, _)
            | Op::Relu(x)
            | Op::Reshape(x)
            | Op::Permute(x)
            | Op::Slice(x, _)
            | Op::Gather(x, _)
            | Op::ReduceSum(x)
            | Op::ReduceMax(x)
            | Op::Norm(x)
            | Op::Softmax(x, _)
            | Op::Squash(x)
            | Op::Pad2d(x)
            | Op::Haar(x) => vec![*x],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::Affine(..) => "affine",
            Op::Relu(..) => "relu",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Gather(..) => "gather",
            Op::ReduceSum(..) => "reduce_sum",
            Op::ReduceMax(..) => "reduce_max",
            Op::Norm(..) => "norm",
            Op::Matmul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::Conv2d(..) => "conv2d",
            Op::Squash(..) => "squash",
            Op::Pad2d(..) => "pad2d",
            Op::Haar(..) => "haar",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Index map saved by the forward pass (gather sources, argmax, reduction targets).
    aux: Vec<usize>,
}

/// The computation record. Confined to one thread; build one per worker.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            aux: Vec::new(),
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, aux: Vec<usize>) -> Result<Var> {
        let value = Tensor::from_parts(shape, data);
        value.check_finite(op.name())?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(self.shape(a).to_vec(), data, op, vec![])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `x · s` where `s` holds a single element.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(format!(
                "mul_scalar: factor has shape {:?}",
                self.shape(s)
            )));
        }
        let sv = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        self.push(self.shape(x).to_vec(), data, Op::MulScalar(x, s), vec![])
    }

    /// `scale · x + offset`, elementwise, with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| scale * v + offset).collect();
        self.push(self.shape(x).to_vec(), data, Op::Affine(x, scale), vec![])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.affine(x, factor, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Relu(x), vec![])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "reshape: {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let data = self.value(x).data().to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(x), vec![])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(format!("permute: bad axes {axes:?} for rank {rank}")));
        }
        let (shape, src) = kernels::permute(self.value(x).data(), self.shape(x), axes);
        let xs = self.value(x).data();
        let data = src.iter().map(|&i| xs[i]).collect();
        self.push(shape, data, Op::Permute(x), src)
    }

    /// Matrix transpose of a rank-2 value.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::dim("transpose needs rank 2"));
        }
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat: axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, data, Op::Concat(xs.to_vec(), axis), vec![])
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(Error::dim(format!(
                "slice {start}..{} of axis 0 with extent {}",
                start + len,
                shape[0]
            )));
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut out = shape;
        out[0] = len;
        self.push(out, data, Op::Slice(x, start), vec![])
    }

    /// Selects rows along axis 0 by index; indices may repeat.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if indices.is_empty() || indices.iter().any(|&i| i >= shape[0]) {
            return Err(Error::dim(format!("gather: indices out of range for {shape:?}")));
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out = shape;
        out[0] = indices.len();
        self.push(out, data, Op::Gather(x, indices.to_vec()), vec![])
    }

    fn check_axes(&self, x: Var, axes: &[usize]) -> Result<()> {
        let rank = self.shape(x).len();
        if axes.is_empty() || axes.iter().any(|&a| a >= rank) {
            return Err(Error::dim(format!("bad reduction axes {axes:?} for rank {rank}")));
        }
        Ok(())
    }

    /// Sum over `axes`; reducing every axis yields shape `[1]`.
    pub fn reduce_sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check_axes(x, axes)?;
        let (shape, map) = kernels::reduction_map(self.shape(x), axes);
        let mut data = vec![0.0; shape.iter().product()];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            data[o] += v;
        }
        self.push(shape, data, Op::ReduceSum(x), map)
    }

    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let count: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.reduce_sum(x, axes)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Maximum over `axes`; the gradient flows to the first maximal element.
    pub fn reduce_max(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check_axes(x, axes)?;
        let (shape, map) = kernels::reduction_map(self.shape(x), axes);
        let n_out: usize = shape.iter().product();
        let mut data = vec![f64::NEG_INFINITY; n_out];
        let mut arg = vec![0usize; n_out];
        for (i, (&v, &o)) in self.value(x).data().iter().zip(&map).enumerate() {
            if v > data[o] {
                data[o] = v;
                arg[o] = i;
            }
        }
        self.push(shape, data, Op::ReduceMax(x), arg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes)
    }

    /// Euclidean norm over the last axis. A rank-1 input gives shape `[1]`.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        self.push(out, data, Op::Norm(x), vec![])
    }

    /// Frobenius norm of the whole value, shape `[1]`.
    pub fn frobenius(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.norm(flat)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(vec![m, n], data, Op::Matmul(a, b), vec![])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax: axis {axis} for rank {}", shape.len())));
        }
        let data = kernels::softmax(self.value(x).data(), &shape, axis);
        self.push(shape, data, Op::Softmax(x, axis), vec![])
    }

    /// Cross-correlation of an `[h, w, cin]` map with `[kh, kw, cin, cout]` kernels.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(k));
        if sx.len() != 3 || sk.len() != 4 || sx[2] != sk[2] {
            return Err(Error::dim(format!("conv2d: input {sx:?}, kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::Usage("conv2d: stride must be positive".into()));
        }
        let (h, w) = (sx[0], sx[1]);
        let (kh, kw) = (sk[0], sk[1]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            h,
            w,
            cin: sx[2],
            kh,
            kw,
            cout: sk[3],
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let data = kernels::conv2d(self.value(x).data(), self.value(k).data(), &geom);
        self.push(vec![geom.oh, geom.ow, geom.cout], data, Op::Conv2d(x, k, geom), vec![])
    }

    /// Capsule squashing over the last axis: `s · ‖s‖ / (1 + ‖s‖²)`.
    pub fn squash(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        let data = kernels::squash(self.value(x).data(), d);
        self.push(self.shape(x).to_vec(), data, Op::Squash(x), vec![])
    }

    /// Zero-pads an `[h, w, c]` map at the bottom and right.
    pub fn pad2d(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("pad2d: expected [h, w, c], got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let (nh, nw) = (h + bottom, w + right);
        let src = self.value(x).data();
        let mut data = vec![0.0; nh * nw * c];
        for y in 0..h {
            data[y * nw * c..(y * nw + w) * c].copy_from_slice(&src[y * w * c..(y + 1) * w * c]);
        }
        self.push(vec![nh, nw, c], data, Op::Pad2d(x), vec![])
    }

    /// Stride-2 Haar analysis of an `[h, w, c]` map into `[h/2, w/2, 4c]`,
    /// channel order `[LL₁, LH₁, HL₁, HH₁, LL₂, …]`.
    pub fn haar(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::dim(format!("haar: needs [even, even, c], got {s:?}")));
        }
        let data = kernels::haar(self.value(x).data(), s[0], s[1], s[2]);
        self.push(vec![s[0] / 2, s[1] / 2, 4 * s[2]], data, Op::Haar(x), vec![])
    }

    /// Accumulates `∂output/∂leaf` into every gradient-requiring leaf.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        if !self.requires_grad(output) {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        local[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                match &mut self.grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut local);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of `v` when `v` participates.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = local[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                with(*a, &mut |ga| axpy(ga, g, 1.0));
                with(*b, &mut |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                with(*a, &mut |ga| axpy(ga, g, 1.0));
                with(*b, &mut |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                with(*a, &mut |ga| ga.iter_mut().zip(g).zip(bv).for_each(|((o, gg), y)| *o += gg * y));
                with(*b, &mut |gb| gb.iter_mut().zip(g).zip(av).for_each(|((o, gg), x)| *o += gg * x));
            }
            Op::MulScalar(x, s) => {
                let sv = val(*s)[0];
                let xv = val(*x);
                with(*x, &mut |gx| axpy(gx, g, sv));
                with(*s, &mut |gs| gs[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>());
            }
            Op::Affine(x, scale) => with(*x, &mut |gx| axpy(gx, g, *scale)),
            Op::Relu(x) => {
                let xv = val(*x);
                with(*x, &mut |gx| {
                    for ((o, gg), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += gg;
                        }
                    }
                });
            }
            Op::Reshape(x) => with(*x, &mut |gx| axpy(gx, g, 1.0)),
            Op::Pad2d(x) => {
                let s = nodes[x.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let nw = node.value.shape()[1];
                with(*x, &mut |gx| {
                    for y in 0..h {
                        axpy(&mut gx[y * w * c..(y + 1) * w * c], &g[y * nw * c..(y * nw + w) * c], 1.0);
                    }
                });
            }
            Op::Permute(x) => {
                with(*x, &mut |gx| {
                    for (&src, gg) in node.aux.iter().zip(g) {
                        gx[src] += gg;
                    }
                });
            }
            Op::Gather(x, indices) => {
                let row = node.value.len() / indices.len();
                with(*x, &mut |gx| {
                    for (k, &i) in indices.iter().enumerate() {
                        axpy(&mut gx[i * row..(i + 1) * row], &g[k * row..(k + 1) * row], 1.0);
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    with(v, &mut |gv| {
                        for o in 0..outer {
                            axpy(
                                &mut gv[o * chunk..(o + 1) * chunk],
                                &g[o * total + offset..o * total + offset + chunk],
                                1.0,
                            );
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Slice(x, start) => {
                let row = node.value.len() / node.value.shape()[0];
                with(*x, &mut |gx| axpy(&mut gx[start * row..start * row + g.len()], g, 1.0));
            }
            Op::ReduceSum(x) => {
                with(*x, &mut |gx| {
                    for (o, &m) in gx.iter_mut().zip(&node.aux) {
                        *o += g[m];
                    }
                });
            }
            Op::ReduceMax(x) => {
                with(*x, &mut |gx| {
                    for (&src, gg) in node.aux.iter().zip(g) {
                        gx[src] += gg;
                    }
                });
            }
            Op::Norm(x) => {
                let xv = val(*x);
                let d = *nodes[x.0].value.shape().last().unwrap();
                let n = node.value.data();
                with(*x, &mut |gx| {
                    for (r, (gxr, xr)) in gx.chunks_mut(d).zip(xv.chunks(d)).enumerate() {
                        if n[r] > 0.0 {
                            let f = g[r] / n[r];
                            gxr.iter_mut().zip(xr).for_each(|(o, v)| *o += f * v);
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                with(*a, &mut |ga| kernels::matmul_grad_a(g, bv, ga, m, k, n));
                with(*b, &mut |gb| kernels::matmul_grad_b(g, av, gb, m, k, n));
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                with(*x, &mut |gx| kernels::softmax_backward(y, g, gx, node.value.shape(), *axis));
            }
            Op::Conv2d(x, k, geom) => {
                let (xv, kv) = (val(*x), val(*k));
                let need_x = nodes[x.0].requires_grad;
                let need_k = nodes[k.0].requires_grad;
                let mut gx_buf = need_x.then(|| local[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]));
                let mut gk_buf = need_k.then(|| local[k.0].take().unwrap_or_else(|| vec![0.0; kv.len()]));
                kernels::conv2d_backward(xv, kv, g, geom, gx_buf.as_deref_mut(), gk_buf.as_deref_mut());
                if let Some(b) = gx_buf {
                    local[x.0] = Some(b);
                }
                if let Some(b) = gk_buf {
                    local[k.0] = Some(b);
                }
            }
            Op::Squash(x) => {
                let xv = val(*x);
                let d = *nodes[x.0].value.shape().last().unwrap();
                with(*x, &mut |gx| kernels::squash_backward(xv, g, gx, d));
            }
            Op::Haar(x) => {
                let s = nodes[x.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                with(*x, &mut |gx| kernels::haar_backward(g, gx, h, w, c));
            }
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

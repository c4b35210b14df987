//! Forward and vector-Jacobian kernels on raw row-major buffers.

use crate::dwt::HAAR_FILTERS;
use crate::tensor::strides;

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g · bᵀ` accumulated into `ga` (`g` is m×n, `b` is k×n).
pub(crate) fn matmul_grad_a(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `aᵀ · g` accumulated into `gb` (`a` is m×k, `g` is m×n).
pub(crate) fn matmul_grad_b(g: &[f64], a: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in gbrow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Input coordinate for output position `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

pub(crate) fn conv2d(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let orow = &mut out[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xbase = (iy * g.w + ix) * g.cin;
                    for ci in 0..g.cin {
                        let xv = x[xbase + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let kbase = ((ky * g.kw + kx) * g.cin + ci) * g.cout;
                        for (o, &kv) in orow.iter_mut().zip(&k[kbase..kbase + g.cout]) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    mut gx: Option<&mut [f64]>,
    mut gk: Option<&mut [f64]>,
) {
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let grow = &gout[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xbase = (iy * g.w + ix) * g.cin;
                    for ci in 0..g.cin {
                        let kbase = ((ky * g.kw + kx) * g.cin + ci) * g.cout;
                        let krow = &k[kbase..kbase + g.cout];
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[xbase + ci] +=
                                grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gk) = gk.as_deref_mut() {
                            let xv = x[xbase + ci];
                            if xv != 0.0 {
                                for (o, &gv) in gk[kbase..kbase + g.cout].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Haar analysis on an `[h, w, c]` map with even `h`, `w`. Output channel
/// `4·ch + band` holds sub-band `band` (LL, LH, HL, HH) of input channel `ch`.
pub(crate) fn haar(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * 4 * c];
    for y in 0..oh {
        for xx in 0..ow {
            let obase = (y * ow + xx) * 4 * c;
            for ch in 0..c {
                for (band, f) in HAAR_FILTERS.iter().enumerate() {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += f[dy][dx] as f64 * x[((2 * y + dy) * w + 2 * xx + dx) * c + ch];
                        }
                    }
                    out[obase + 4 * ch + band] = acc;
                }
            }
        }
    }
    out
}

pub(crate) fn haar_backward(gout: &[f64], gx: &mut [f64], h: usize, w: usize, c: usize) {
    let (oh, ow) = (h / 2, w / 2);
    for y in 0..oh {
        for xx in 0..ow {
            let obase = (y * ow + xx) * 4 * c;
            for ch in 0..c {
                for (band, f) in HAAR_FILTERS.iter().enumerate() {
                    let gv = gout[obase + 4 * ch + band];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            gx[((2 * y + dy) * w + 2 * xx + dx) * c + ch] += f[dy][dx] as f64 * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (x[idx(k)] - max).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[idx(k)] /= total;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], gx: &mut [f64], shape: &[usize], axis: usize) {
    let (outer, n, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| y[idx(k)] * g[idx(k)]).sum();
            for k in 0..n {
                gx[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
            }
        }
    }
}

/// Output shape and input→output index map for a reduction over `axes`.
pub(crate) fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let mut out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let in_strides = strides(shape);
    let out_strides = strides(&kept.iter().map(|&a| shape[a]).collect::<Vec<_>>());
    let n: usize = shape.iter().product();
    let map = (0..n)
        .map(|flat| {
            kept.iter()
                .zip(&out_strides)
                .map(|(&a, &os)| (flat / in_strides[a]) % shape[a] * os)
                .sum()
        })
        .collect();
    (out_shape, map)
}

pub(crate) fn permute(x: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    // source index for every output position
    let src = (0..x.len())
        .map(|flat| {
            axes.iter()
                .enumerate()
                .map(|(i, &a)| (flat / out_strides[i]) % out_shape[i] * in_strides[a])
                .sum()
        })
        .collect();
    (out_shape, src)
}

/// `h(n) = n / (1 + n²)` with `n = sqrt(‖s‖² + eps)`.
pub(crate) const SQUASH_EPS: f64 = 1e-12;

pub(crate) fn squash(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
        let n = (src.iter().map(|v| v * v).sum::<f64>() + SQUASH_EPS).sqrt();
        let h = n / (1.0 + n * n);
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = v * h;
        }
    }
    out
}

pub(crate) fn squash_backward(x: &[f64], g: &[f64], gx: &mut [f64], d: usize) {
    for ((src, gv), gdst) in x.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
        let q: f64 = src.iter().map(|v| v * v).sum::<f64>() + SQUASH_EPS;
        let n = q.sqrt();
        let h = n / (1.0 + q);
        let dh_over_n = (1.0 - q) / ((1.0 + q) * (1.0 + q)) / n;
        let dot: f64 = src.iter().zip(gv).map(|(a, b)| a * b).sum();
        for ((o, &s), &gg) in gdst.iter_mut().zip(src).zip(gv) {
            *o += h * gg + s * dh_over_n * dot;
        }
    }
}

//! Standalone reference implementations written with plain loops over
//! `Vec<f64>`. They take raw numbers from the library but never call its
//! kernels.

#![allow(dead_code)]

pub mod suites;

use capsroute::rng::{seeded, unit, Rng};
use capsroute::Tensor;

pub fn rng(seed: u64) -> Rng {
    seeded(seed)
}

pub fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(r)
}

pub fn random_vec(r: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(r, -scale, scale)).collect()
}

pub fn random_tensor(r: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(r, n, scale)).unwrap()
}

/// `[m, k] · [k, n]`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Cross-correlation of `[h, w, cin]` with `[kh, kw, cin, cout]`, zero padding.
pub fn conv2d(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    k: &[f64],
    (kh, kw, cout): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut s = 0.0;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x[(iy as usize * w + ix as usize) * cin + ci];
                            let kv = k[((dy * kw + dx) * cin + ci) * cout + co];
                            s += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = s;
            }
        }
    }
    (out, oh, ow)
}

/// Haar sub-bands of an even `[h, w]` map from the block formulas
/// `[[a, b], [c, d]]`: LL = a+b+c+d, LH = c+d−a−b, HL = b+d−a−c, HH = a+d−b−c.
pub fn haar(map: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let (oh, ow) = (h / 2, w / 2);
    let mut bands = [vec![0.0; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow]];
    for y in 0..oh {
        for x in 0..ow {
            let a = map[2 * y * w + 2 * x];
            let b = map[2 * y * w + 2 * x + 1];
            let c = map[(2 * y + 1) * w + 2 * x];
            let d = map[(2 * y + 1) * w + 2 * x + 1];
            let i = y * ow + x;
            bands[0][i] = a + b + c + d;
            bands[1][i] = c + d - a - b;
            bands[2][i] = b + d - a - c;
            bands[3][i] = a + d - b - c;
        }
    }
    bands
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(‖s‖²/(1+‖s‖²))·s/‖s‖`, zero for the zero vector.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let f = n2 / (1.0 + n2) / n2.sqrt();
    s.iter().map(|x| x * f).collect()
}

/// Attentive downsampling of `[h, w, k]` with a `[5, 4]` gate (last row bias).
pub fn attentive_dwt(x: &[f64], h: usize, w: usize, k: usize, gate: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * 4 * k];
    for ch in 0..k {
        let map: Vec<f64> = (0..h * w).map(|p| x[p * k + ch]).collect();
        let bands = haar(&map, h, w);
        let maxima: Vec<f64> = bands
            .iter()
            .map(|b| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let logits: Vec<f64> = (0..4)
            .map(|o| (0..4).map(|i| maxima[i] * gate[i * 4 + o]).sum::<f64>() + gate[16 + o])
            .collect();
        let alpha = softmax(&logits);
        for p in 0..oh * ow {
            for b in 0..4 {
                out[p * 4 * k + 4 * ch + b] = alpha[b] * bands[b][p];
            }
        }
    }
    out
}

/// Routing-by-agreement. `u[i]` is a flattened capsule, `w[i][j]` a
/// row-major `D × D` matrix with `û_{j|i} = W_ij u_i`.
pub fn dynamic_routing(u: &[Vec<f64>], w: &[Vec<Vec<f64>>], outputs: usize, iterations: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d = u[0].len();
    let m = u.len();
    let mut pred = vec![vec![vec![0.0; d]; outputs]; m];
    for i in 0..m {
        for j in 0..outputs {
            pred[i][j] = matmul(&w[i][j], &u[i], d, d, 1);
        }
    }
    let mut b = vec![vec![0.0; outputs]; m];
    let mut v = vec![vec![0.0; d]; outputs];
    let mut couplings = Vec::new();
    for it in 0..iterations {
        let c: Vec<Vec<f64>> = b.iter().map(|row| softmax(row)).collect();
        for j in 0..outputs {
            let mut s = vec![0.0; d];
            for i in 0..m {
                for t in 0..d {
                    s[t] += c[i][j] * pred[i][j][t];
                }
            }
            v[j] = squash(&s);
        }
        couplings.push(c);
        if it + 1 < iterations {
            for i in 0..m {
                for j in 0..outputs {
                    b[i][j] += (0..d).map(|t| v[j][t] * pred[i][j][t]).sum::<f64>();
                }
            }
        }
    }
    (v, couplings)
}

/// Pairwise pyramid: each level fuses neighbours as `w1·a + w2·b` until two
/// tensors remain; returns every level after the input, concatenated.
pub fn pyramid(u: &[Vec<f64>], levels: &[(Vec<f64>, Vec<f64>)], nc: usize) -> Vec<Vec<f64>> {
    let mut current = u.to_vec();
    let mut out = Vec::new();
    let mut g = 0;
    while current.len() > 2 {
        let (w1, w2) = &levels[g];
        let next: Vec<Vec<f64>> = current
            .chunks(2)
            .map(|p| {
                let a = matmul(w1, &p[0], nc, nc, nc);
                let b = matmul(w2, &p[1], nc, nc, nc);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            })
            .collect();
        out.extend(next.iter().cloned());
        current = next;
        g += 1;
    }
    assert_eq!(g, levels.len(), "level count");
    out
}

pub struct MultiscaleOracle {
    pub output: Vec<Vec<f64>>,
    pub couplings: Vec<Vec<f64>>,
}

/// Pyramid, permutation (`shuffled[s] = fused[perm[s]]`), windows starting at
/// `min(⌊2p/J⌋·j, M − I)`, scaled dot-product attention and the row mean.
pub fn multiscale_route(
    u: &[Vec<f64>],
    levels: &[(Vec<f64>, Vec<f64>)],
    perm: &[usize],
    window: usize,
    attention: &[(Vec<f64>, Vec<f64>)],
    nc: usize,
) -> MultiscaleOracle {
    let d = nc * nc;
    let two_p = u.len();
    let fused = pyramid(u, levels, nc);
    let m = fused.len();
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&p| fused[p].clone()).collect();
    let outputs = attention.len();
    let stride = two_p / outputs;
    let mut output = Vec::new();
    let mut couplings = Vec::new();
    for (j, (wq, wk)) in attention.iter().enumerate() {
        let start = (stride * j).min(m - window);
        let x: Vec<f64> = shuffled[start..start + window].concat();
        let q = matmul(&x, wq, window, d, d);
        let k = matmul(&x, wk, window, d, d);
        let scores = matmul(&q, &transpose(&k, window, d), window, d, window);
        let mut c = Vec::with_capacity(window * window);
        for row in scores.chunks(window) {
            let scaled: Vec<f64> = row.iter().map(|s| s / (nc as f64).sqrt()).collect();
            c.extend(softmax(&scaled));
        }
        let v = matmul(&c, &x, window, window, d);
        let mean: Vec<f64> = (0..d)
            .map(|t| (0..window).map(|r| v[r * d + t]).sum::<f64>() / window as f64)
            .collect();
        output.push(mean);
        couplings.push(c);
    }
    MultiscaleOracle { output, couplings }
}

pub fn margin_loss(lengths: &[f64], true_class: usize) -> f64 {
    lengths
        .iter()
        .enumerate()
        .map(|(c, &l)| {
            if c == true_class {
                (0.9 - l).max(0.0).powi(2)
            } else {
                0.5 * (l - 0.1).max(0.0).powi(2)
            }
        })
        .sum()
}

/// `(OA, AA, kappa)` written out term by term.
pub fn metrics(conf: &[Vec<f64>]) -> (f64, f64, f64) {
    let c = conf.len();
    let mut total = 0.0;
    let mut correct = 0.0;
    for i in 0..c {
        for j in 0..c {
            total += conf[i][j];
        }
        correct += conf[i][i];
    }
    let oa = correct / total;
    let mut recall_sum = 0.0;
    let mut present = 0.0;
    for i in 0..c {
        let row: f64 = conf[i].iter().sum();
        if row > 0.0 {
            recall_sum += conf[i][i] / row;
            present += 1.0;
        }
    }
    let aa = recall_sum / present;
    let mut pe = 0.0;
    for i in 0..c {
        let row: f64 = conf[i].iter().sum();
        let col: f64 = (0..c).map(|r| conf[r][i]).sum();
        pe += row * col;
    }
    pe /= total * total;
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    (oa, aa, kappa)
}

/// Nearest class-mean classifier on centre-pixel spectra; returns test accuracy.
pub fn centroid_accuracy(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)], classes: usize) -> f64 {
    let bands = train[0].0.len();
    let mut sums = vec![vec![0.0; bands]; classes];
    let mut counts = vec![0.0; classes];
    for (x, c) in train {
        for b in 0..bands {
            sums[*c][b] += x[b];
        }
        counts[*c] += 1.0;
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, n)| s.iter().map(|v| v / n).collect())
        .collect();
    let correct = test
        .iter()
        .filter(|(x, c)| {
            let best = (0..classes)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q).powi(2)).sum();
                    let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == *c
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Hand-simulated plateau schedule: returns the lr used at each epoch.
pub fn schedule(val_losses: &[f64], max_epochs: usize, lr0: f64, halve: usize, stop: usize) -> Vec<f64> {
    let mut lrs = Vec::new();
    let mut lr = lr0;
    let mut best = f64::INFINITY;
    let mut bad = 0;
    for epoch in 0..max_epochs {
        lrs.push(lr);
        let v = val_losses[epoch.min(val_losses.len() - 1)];
        if v < best - 1e-6 {
            best = v;
            bad = 0;
        } else {
            bad += 1;
            if bad >= stop {
                break;
            }
            if bad % halve == 0 {
                lr /= 2.0;
            }
        }
    }
    lrs
}

/// Spatial side and channel count after each backbone block of the tiny
/// variant: conv keeps the side, a DWT halves it after padding odd sides.
pub fn tiny_shapes(patch: usize, bands: usize, widths: &[usize], downsample: &[usize]) -> (usize, usize) {
    let mut size = patch;
    let mut ch = bands;
    for (s, &w) in widths.iter().enumerate() {
        ch = w;
        if downsample.contains(&s) {
            size = (size + 1) / 2;
            ch *= 4;
        }
    }
    (size, ch)
}

/// Conv weights + biases + 20 per gate.
pub fn tiny_params(bands: usize, widths: &[usize], downsample: &[usize]) -> usize {
    let mut cin = bands;
    let mut total = 0;
    for (s, &w) in widths.iter().enumerate() {
        total += 9 * cin * w + w;
        cin = w;
        if downsample.contains(&s) {
            total += 20;
            cin *= 4;
        }
    }
    total
}

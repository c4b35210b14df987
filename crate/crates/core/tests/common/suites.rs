//! Measurement routines shared by the integration tests and the acceptance
//! runner. Each returns the measured quantity; callers apply thresholds.

use capsroute::autodiff::{Tape, Var};
use capsroute::capsules::{
    dynamic_routing_traced, dynamic_routing_var, margin_loss_var, primary_caps_var, squash, RoutingWeights,
};
use capsroute::data::{metrics, ConfusionMatrix};
use capsroute::dwt::{
    attentive_downsample, attentive_downsample_var, attention_weights, filter_gram, haar_decompose,
    haar_reconstruct, AttentionGate, Subband,
};
use capsroute::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use capsroute::multiscale::{
    aggregate_votes_var, attention_coupling_var, multiscale_route_traced, plan_windows, pyramid_fusion_var,
    pyramid_levels, AttentionParams, MultiscaleParams, PyramidWeights,
};
use capsroute::rng::{below, permutation};
use capsroute::{CapsuleSet, Result, Tensor};

use super::*;

pub fn random_even_map(r: &mut Rng) -> Tensor {
    let h = 2 * (1 + below(r, 16));
    let w = 2 * (1 + below(r, 16));
    let scale = 10f64.powf(uniform(r, -3.0, 3.0));
    random_tensor(r, &[h, w], scale)
}

/// Worst absolute reconstruction error over `trials` random even maps.
pub fn dwt_roundtrip_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_even_map(&mut r);
        let back = haar_reconstruct(&haar_decompose(&x).unwrap()).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
    }
    worst
}

/// Worst absolute difference between library sub-bands and the block formulas.
pub fn dwt_subband_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_even_map(&mut r);
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let want = haar(x.data(), h, w);
        let got = haar_decompose(&x).unwrap();
        for (g, w) in got.bands().iter().zip(&want) {
            for (a, b) in g.data().iter().zip(w) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Worst `|Σ‖band‖² − 4‖x‖²| / 4‖x‖²`.
pub fn dwt_energy_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_even_map(&mut r);
        let input: f64 = x.data().iter().map(|v| v * v).sum();
        let bands: f64 = haar_decompose(&x)
            .unwrap()
            .bands()
            .iter()
            .flat_map(|b| b.data().iter().map(|v| v * v))
            .sum();
        worst = worst.max((bands - 4.0 * input).abs() / (4.0 * input));
    }
    worst
}

/// Gram matrix of the four filters computed from their entries, and the
/// library's own report of it.
pub fn filter_grams() -> ([[i32; 4]; 4], [[i32; 4]; 4]) {
    let mut g = [[0; 4]; 4];
    for (a, fa) in Subband::ALL.iter().enumerate() {
        for (b, fb) in Subband::ALL.iter().enumerate() {
            let (fa, fb) = (fa.filter(), fb.filter());
            g[a][b] = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| fa[i][j] * fb[i][j]).sum();
        }
    }
    (g, filter_gram())
}

/// Worst difference between the attentive downsampling layer and its oracle.
pub fn attentive_dwt_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = 2 * (1 + below(&mut r, 4));
        let k = 1 + below(&mut r, 3);
        let x = random_tensor(&mut r, &[n, n, k], 1.0);
        let gate = random_tensor(&mut r, &[5, 4], 1.0);
        let got = attentive_downsample(&x, &AttentionGate::from_tensor(gate.clone()).unwrap()).unwrap();
        let want = attentive_dwt(x.data(), n, n, k, gate.data());
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn capsules_of(r: &mut Rng, m: usize, nc: usize, scale: f64) -> (CapsuleSet, Vec<Vec<f64>>) {
    let flat: Vec<Vec<f64>> = (0..m).map(|_| random_vec(r, nc * nc, scale)).collect();
    let tensors: Vec<Tensor> = flat.iter().map(|v| Tensor::new(vec![nc, nc], v.clone()).unwrap()).collect();
    (CapsuleSet::new(&tensors, 0).unwrap(), flat)
}

pub struct RoutingComparison {
    pub output_error: f64,
    pub coupling_error: f64,
    /// Worst `|Σ_j c_ij − 1|` over every coupling row the library produced.
    pub row_sum_error: f64,
}

/// Library dynamic routing against the loop oracle on instances with at most
/// eight input capsules.
pub fn dynamic_routing_comparison(trials: usize, seed: u64) -> RoutingComparison {
    let mut r = rng(seed);
    let mut out = RoutingComparison {
        output_error: 0.0,
        coupling_error: 0.0,
        row_sum_error: 0.0,
    };
    for _ in 0..trials {
        let m = 1 + below(&mut r, 8);
        let outputs = 1 + below(&mut r, 4);
        let nc = 1 + below(&mut r, 3);
        let d = nc * nc;
        let iterations = 1 + below(&mut r, 4);
        let (caps, u) = capsules_of(&mut r, m, nc, 1.0);
        let w: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|_| (0..outputs).map(|_| random_vec(&mut r, d * d, 1.0)).collect())
            .collect();
        let pairs: Vec<Vec<Tensor>> = w
            .iter()
            .map(|row| row.iter().map(|x| Tensor::new(vec![d, d], x.clone()).unwrap()).collect())
            .collect();
        let weights = RoutingWeights::from_pairs(&pairs).unwrap();
        let (got, couplings) = dynamic_routing_traced(&caps, &weights, iterations).unwrap();
        let (want, want_c) = dynamic_routing(&u, &w, outputs, iterations);
        for j in 0..outputs {
            for (a, b) in got.flat(j).iter().zip(&want[j]) {
                out.output_error = out.output_error.max((a - b).abs());
            }
        }
        for (c, wc) in couplings.iter().zip(&want_c) {
            for i in 0..m {
                let row = &c.data()[i * outputs..(i + 1) * outputs];
                out.row_sum_error = out.row_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
                for (a, b) in row.iter().zip(&wc[i]) {
                    out.coupling_error = out.coupling_error.max((a - b).abs());
                }
            }
        }
    }
    out
}

/// Library multi-scale routing against the loop oracle for 4 or 8 input capsules.
pub fn multiscale_comparison(trials: usize, seed: u64) -> RoutingComparison {
    let mut r = rng(seed);
    let mut out = RoutingComparison {
        output_error: 0.0,
        coupling_error: 0.0,
        row_sum_error: 0.0,
    };
    for t in 0..trials {
        let two_p = if t % 2 == 0 { 4 } else { 8 };
        let nc = 1 + below(&mut r, 3);
        let d = nc * nc;
        let m = two_p - 2;
        let outputs = 1 + below(&mut r, two_p);
        let window = 1 + below(&mut r, m);
        let (caps, u) = capsules_of(&mut r, two_p, nc, 1.0);
        let levels: Vec<(Vec<f64>, Vec<f64>)> = (0..pyramid_levels(two_p).unwrap())
            .map(|_| (random_vec(&mut r, nc * nc, 1.0), random_vec(&mut r, nc * nc, 1.0)))
            .collect();
        let attention: Vec<(Vec<f64>, Vec<f64>)> = (0..outputs)
            .map(|_| (random_vec(&mut r, d * d, 1.0), random_vec(&mut r, d * d, 1.0)))
            .collect();
        let perm = permutation(m, uniform(&mut r, 0.0, 1e9) as u64);
        let params = MultiscaleParams {
            pyramid: PyramidWeights {
                levels: levels
                    .iter()
                    .map(|(a, b)| {
                        (
                            Tensor::new(vec![nc, nc], a.clone()).unwrap(),
                            Tensor::new(vec![nc, nc], b.clone()).unwrap(),
                        )
                    })
                    .collect(),
            },
            permutation: perm.clone(),
            plan: plan_windows(two_p, m, outputs, window).unwrap(),
            attention: attention
                .iter()
                .map(|(q, k)| AttentionParams {
                    query: Tensor::new(vec![d, d], q.clone()).unwrap(),
                    key: Tensor::new(vec![d, d], k.clone()).unwrap(),
                })
                .collect(),
        };
        let (got, couplings) = multiscale_route_traced(&caps, &params).unwrap();
        let want = multiscale_route(&u, &levels, &perm, window, &attention, nc);
        for j in 0..outputs {
            for (a, b) in got.flat(j).iter().zip(&want.output[j]) {
                out.output_error = out.output_error.max((a - b).abs());
            }
        }
        for (c, wc) in couplings.iter().zip(&want.couplings) {
            for row in c.data().chunks(window) {
                out.row_sum_error = out.row_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            for (a, b) in c.data().iter().zip(wc) {
                out.coupling_error = out.coupling_error.max((a - b).abs());
            }
        }
    }
    out
}

/// Worst `|Σα − 1|` of the sub-band attention over random maps and gates.
pub fn dwt_attention_sum_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_even_map(&mut r);
        let gate = AttentionGate::from_tensor(random_tensor(&mut r, &[5, 4], 3.0)).unwrap();
        let a = attention_weights(&haar_decompose(&x).unwrap(), &gate).unwrap();
        worst = worst.max((a.sum() - 1.0).abs());
    }
    worst
}

pub struct SquashStats {
    pub min_norm: f64,
    pub max_norm: f64,
    pub non_finite: usize,
}

/// Output norms of `count` squashed vectors whose input norms span 1e-300 to 1e6.
pub fn squash_norms(count: usize, seed: u64) -> SquashStats {
    let mut r = rng(seed);
    let mut s = SquashStats {
        min_norm: f64::INFINITY,
        max_norm: 0.0,
        non_finite: 0,
    };
    for t in 0..count {
        let d = 1 + below(&mut r, 16);
        let scale = match t % 4 {
            0 => 0.0,
            1 => 10f64.powf(uniform(&mut r, -300.0, -6.0)),
            _ => 10f64.powf(uniform(&mut r, -6.0, 6.0)),
        };
        let x = random_tensor(&mut r, &[d], scale);
        let v = squash(&x);
        if v.data().iter().any(|x| !x.is_finite()) {
            s.non_finite += 1;
            continue;
        }
        let n = norm(v.data());
        s.min_norm = s.min_norm.min(n);
        s.max_norm = s.max_norm.max(n);
    }
    s
}

/// Worst deviation of library OA/AA/kappa from the longhand oracle over
/// random confusion matrices.
pub fn metrics_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c = 2 + below(&mut r, 9);
        let mut rows = vec![vec![0.0; c]; c];
        for row in rows.iter_mut() {
            for v in row.iter_mut() {
                *v = below(&mut r, 50) as f64;
            }
        }
        rows[0][0] += 1.0;
        let t = Tensor::new(vec![c, c], rows.concat()).unwrap();
        let got = metrics(&t).unwrap();
        let (oa, aa, kappa) = super::metrics(&rows);
        worst = worst
            .max((got.overall_accuracy - oa).abs())
            .max((got.average_accuracy - aa).abs())
            .max((got.kappa - kappa).abs());
    }
    worst
}

/// Counts of (diagonal, kappa = 1) disagreements over random confusion
/// matrices, half of them diagonal.
pub fn kappa_one_iff_diagonal(trials: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut mismatches = 0;
    for t in 0..trials {
        let c = 2 + below(&mut r, 6);
        let mut cm = ConfusionMatrix::new(c);
        for _ in 0..1 + below(&mut r, 200) {
            let truth = below(&mut r, c);
            let pred = if t % 2 == 0 { truth } else { below(&mut r, c) };
            cm.record(truth, pred);
        }
        let diagonal = (0..c).all(|i| (0..c).all(|j| i == j || cm.get(i, j) == 0));
        let kappa_one = cm.metrics().unwrap().kappa == 1.0;
        if diagonal != kappa_one {
            mismatches += 1;
        }
    }
    mismatches
}

/// Kappa of the chance-level matrix `[[25, 25], [25, 25]]`.
pub fn chance_kappa() -> f64 {
    metrics(&Tensor::new(vec![2, 2], vec![25.0; 4]).unwrap()).unwrap().kappa
}

/// Reduces any output to a scalar with fixed random weights so every element
/// contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.reshape(tape.shape(y))?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

pub struct LayerGradients {
    pub layer: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub nonsmooth: usize,
}

fn summarise(layer: &'static str, reports: Vec<GradCheckReport>, cfg: &GradCheckConfig) -> LayerGradients {
    LayerGradients {
        layer,
        trials: reports.len(),
        failures: reports.iter().filter(|r| !r.passed(cfg)).count(),
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        checked: reports.iter().map(|r| r.checked).sum(),
        nonsmooth: reports.iter().map(|r| r.nonsmooth).sum(),
    }
}

/// Finite-difference checks of every capsule-network layer, `trials` random
/// instances each.
pub fn layer_gradients(trials: usize, seed: u64) -> Vec<LayerGradients> {
    let cfg = GradCheckConfig::default();
    let mut r = rng(seed);
    let mut run = |name: &'static str,
                   make: &dyn Fn(&mut Rng, usize) -> Vec<Tensor>,
                   f: &dyn Fn(&mut Tape, &[Var], usize) -> Result<Var>| {
        let reports = (0..trials)
            .map(|t| {
                let inputs = make(&mut r, t);
                let out_weights_seed = t;
                check_gradients(&inputs, |tape, v| f(tape, v, out_weights_seed), &cfg).unwrap()
            })
            .collect();
        summarise(name, reports, &cfg)
    };
    let weights = |t: usize, n: usize| random_tensor(&mut rng(9_000 + t as u64), &[n], 1.0);

    vec![
        run(
            "attentive_dwt",
            &|r, _| vec![random_tensor(r, &[4, 4, 2], 1.0), random_tensor(r, &[5, 4], 0.5)],
            &|tape, v, t| {
                let y = attentive_downsample_var(tape, v[0], v[1])?;
                weighted_sum(tape, y, &weights(t, 2 * 2 * 8))
            },
        ),
        run(
            "primary_caps",
            &|r, t| {
                // alternate valid and same-padded geometry
                if t % 2 == 0 {
                    vec![
                        random_tensor(r, &[3, 3, 2], 1.0),
                        random_tensor(r, &[3, 3, 2, 16], 0.5),
                        random_tensor(r, &[16], 0.5),
                    ]
                } else {
                    vec![
                        random_tensor(r, &[2, 2, 2], 1.0),
                        random_tensor(r, &[3, 3, 2, 4], 0.5),
                        random_tensor(r, &[4], 0.5),
                    ]
                }
            },
            &|tape, v, t| {
                let pad = t % 2;
                let y = primary_caps_var(tape, v[0], v[1], v[2], pad, 4, 2)?;
                weighted_sum(tape, y, &weights(t, 16))
            },
        ),
        run(
            "dynamic_routing",
            &|r, _| vec![random_tensor(r, &[3, 2, 2], 1.0), random_tensor(r, &[3, 4, 8], 0.7)],
            &|tape, v, t| {
                let y = dynamic_routing_var(tape, v[0], v[1], 2, 3)?.output;
                weighted_sum(tape, y, &weights(t, 8))
            },
        ),
        run(
            "pyramid_fusion",
            &|r, _| {
                let mut v = vec![random_tensor(r, &[8, 2, 2], 1.0)];
                v.extend((0..4).map(|_| random_tensor(r, &[2, 2], 1.0)));
                v
            },
            &|tape, v, t| {
                let y = pyramid_fusion_var(tape, v[0], &[(v[1], v[2]), (v[3], v[4])])?;
                weighted_sum(tape, y, &weights(t, 6 * 4))
            },
        ),
        run(
            "attention_coupling",
            &|r, _| {
                vec![
                    random_tensor(r, &[3, 4], 1.0),
                    random_tensor(r, &[4, 4], 1.0),
                    random_tensor(r, &[4, 4], 1.0),
                ]
            },
            &|tape, v, t| {
                let y = attention_coupling_var(tape, v[0], v[1], v[2], 2)?;
                weighted_sum(tape, y, &weights(t, 9))
            },
        ),
        run(
            "aggregate_votes",
            &|r, _| vec![random_tensor(r, &[3, 3], 1.0), random_tensor(r, &[3, 4], 1.0)],
            &|tape, v, t| {
                let y = aggregate_votes_var(tape, v[0], v[1])?;
                weighted_sum(tape, y, &weights(t, 4))
            },
        ),
        run(
            "margin_loss",
            &|r, _| vec![Tensor::new(vec![4], (0..4).map(|_| uniform(r, 0.0, 1.2)).collect()).unwrap()],
            &|tape, v, t| margin_loss_var(tape, v[0], t % 4),
        ),
    ]
}

/// Centre-pixel spectra of the train and test parts of the standard split
/// (validation fraction equal to the train fraction), labels zero-based.
pub fn centre_spectra_split(
    cube: &capsroute::data::HsiCube,
    labels: &capsroute::data::LabelMap,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<(Vec<f64>, usize)>, Vec<(Vec<f64>, usize)>)> {
    use capsroute::data::{extract_patches, split_indices, SplitSpec};
    let ds = extract_patches(cube, labels, 1)?;
    let idx = split_indices(
        &ds,
        &SplitSpec {
            train_fraction,
            val_fraction: train_fraction,
            seed,
        },
    )?;
    let take = |ix: &[usize]| {
        ix.iter()
            .map(|&i| (ds.patches[i].data.data().to_vec(), ds.patches[i].label as usize - 1))
            .collect()
    };
    Ok((take(&idx.train), take(&idx.test)))
}

/// A stand-in model whose validation losses are scripted.
pub struct Scripted {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub restored: Option<usize>,
}

impl capsroute::train::Trainable for Scripted {
    type Snapshot = usize;

    fn train_epoch(&mut self, lr: f64) -> Result<f64> {
        self.lrs.push(lr);
        Ok(1.0)
    }

    fn val_loss(&mut self) -> Result<f64> {
        let e = self.lrs.len() - 1;
        Ok(self.losses[e.min(self.losses.len() - 1)])
    }

    fn snapshot(&self) -> usize {
        self.lrs.len()
    }

    fn restore(&mut self, epoch: usize) {
        self.restored = Some(epoch);
    }
}

/// Scripted validation-loss sequences covering improvement, plateaus,
/// sub-tolerance gains, late recoveries and noise.
pub fn loss_scripts(seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut scripts = vec![
        (0..300).map(|e| 1.0 / (1.0 + e as f64)).collect(),
        [vec![5.0, 4.0, 3.0, 2.0, 1.0], vec![1.0; 100]].concat(),
        [vec![1.0], vec![1.0 - 5e-7; 100]].concat(),
        [vec![2.0], vec![3.0; 25], vec![1.5], vec![3.0; 60]].concat(),
        [vec![2.0], vec![3.0; 49], vec![1.0], vec![3.0; 60]].concat(),
        [vec![2.0], vec![3.0; 50], vec![1.0]].concat(),
        vec![f64::MAX; 3],
    ];
    for _ in 0..20 {
        let mut v = 1.0;
        scripts.push(
            (0..300)
                .map(|_| {
                    v *= 1.0 + uniform(&mut r, -0.03, 0.028);
                    v
                })
                .collect(),
        );
    }
    scripts
}

/// Runs every script through the trainer's schedule and the hand-simulated
/// oracle; returns the number of scripts whose per-epoch rates, epoch count
/// or restored epoch differ.
pub fn schedule_mismatches(cfg: &capsroute::train::TrainConfig, seed: u64) -> (usize, usize) {
    let scripts = loss_scripts(seed);
    let mut mismatches = 0;
    for losses in &scripts {
        let mut t = Scripted {
            losses: losses.clone(),
            lrs: Vec::new(),
            restored: None,
        };
        let history = capsroute::train::run_schedule(&mut t, cfg).unwrap();
        let want = schedule(losses, cfg.max_epochs, cfg.initial_lr, cfg.lr_halve_patience, cfg.early_stop_patience);
        let recorded: Vec<f64> = history.epochs.iter().map(|e| e.lr).collect();
        // best epoch by the oracle's rule: first strict improvement beyond the tolerance
        let mut best = (f64::INFINITY, 0);
        for (e, &l) in losses.iter().take(want.len()).enumerate() {
            if l < best.0 - 1e-6 {
                best = (l, e + 1);
            }
        }
        if t.lrs != want || recorded != want || t.restored != Some(best.1) || history.best_epoch != best.1 {
            mismatches += 1;
        }
    }
    (mismatches, scripts.len())
}

mod common;

use capsroute::backbone::{Backbone, BackboneConfig};
use capsroute::capsules::{margin_loss, primary_caps, PrimaryCapsProjection};
use capsroute::data::{generate_fixture, FixtureSpec};
use capsroute::model::{Model, ModelConfig};
use capsroute::rng::below;
use capsroute::{Tape, Tensor};

use common::suites::*;
use common::*;

#[test]
fn haar_subbands_match_block_formulas() {
    assert!(dwt_subband_error(200, 1) <= 1e-12);
}

#[test]
fn haar_round_trip_is_exact() {
    assert!(dwt_roundtrip_error(200, 2) <= 1e-12);
}

#[test]
fn haar_energy_is_quadrupled() {
    assert!(dwt_energy_error(200, 3) <= 1e-10);
}

#[test]
fn filter_gram_is_four_identity() {
    let (computed, reported) = filter_grams();
    let four_i: [[i32; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 4 } else { 0 }));
    assert_eq!(computed, four_i);
    assert_eq!(reported, four_i);
}

#[test]
fn attentive_downsampling_matches_oracle() {
    assert!(attentive_dwt_error(50, 4) <= 1e-12);
}

#[test]
fn dynamic_routing_matches_oracle() {
    let c = dynamic_routing_comparison(60, 5);
    assert!(c.output_error <= 1e-10, "output {}", c.output_error);
    assert!(c.coupling_error <= 1e-10, "coupling {}", c.coupling_error);
}

#[test]
fn multiscale_routing_matches_oracle() {
    let c = multiscale_comparison(60, 6);
    assert!(c.output_error <= 1e-10, "output {}", c.output_error);
    assert!(c.coupling_error <= 1e-10, "coupling {}", c.coupling_error);
}

#[test]
fn conv2d_matches_loops() {
    let mut r = rng(7);
    for _ in 0..40 {
        let (h, w, cin) = (1 + below(&mut r, 7), 1 + below(&mut r, 7), 1 + below(&mut r, 3));
        let (kh, kw, cout) = (1 + below(&mut r, 3), 1 + below(&mut r, 3), 1 + below(&mut r, 3));
        let stride = 1 + below(&mut r, 2);
        let pad = below(&mut r, 2);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            continue;
        }
        let x = random_tensor(&mut r, &[h, w, cin], 1.0);
        let k = random_tensor(&mut r, &[kh, kw, cin, cout], 1.0);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = tape.conv2d(xv, kv, stride, pad).unwrap();
        let (want, oh, ow) = conv2d(x.data(), (h, w, cin), k.data(), (kh, kw, cout), stride, pad);
        assert_eq!(tape.shape(y), [oh, ow, cout]);
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn matmul_and_softmax_match_loops() {
    let mut r = rng(8);
    for _ in 0..30 {
        let (m, k, n) = (1 + below(&mut r, 5), 1 + below(&mut r, 5), 1 + below(&mut r, 5));
        let a = random_tensor(&mut r, &[m, k], 2.0);
        let b = random_tensor(&mut r, &[k, n], 2.0);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let y = tape.matmul(av, bv).unwrap();
        let s = tape.softmax(y, 1).unwrap();
        let want = matmul(a.data(), b.data(), m, k, n);
        for (x, y) in tape.value(y).data().iter().zip(&want) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (row, wrow) in tape.value(s).data().chunks(n).zip(want.chunks(n)) {
            for (x, y) in row.iter().zip(softmax(wrow)) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn primary_caps_is_conv_then_reshape() {
    let mut r = rng(9);
    let fm = random_tensor(&mut r, &[3, 3, 2], 1.0);
    let proj = PrimaryCapsProjection {
        kernel: random_tensor(&mut r, &[3, 3, 2, 32], 1.0),
        bias: random_tensor(&mut r, &[32], 1.0),
        padding: 0,
    };
    let caps = primary_caps(&fm, &proj, 2, 4).unwrap();
    let (mut want, _, _) = conv2d(fm.data(), (3, 3, 2), proj.kernel.data(), (3, 3, 32), 1, 0);
    for (v, b) in want.iter_mut().zip(proj.bias.data()) {
        *v += b;
    }
    assert_eq!(caps.len(), 2);
    for i in 0..2 {
        for (a, b) in caps.flat(i).iter().zip(&want[16 * i..16 * (i + 1)]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn margin_loss_matches_formula() {
    let mut r = rng(10);
    for t in 0..50 {
        let l: Vec<f64> = (0..5).map(|_| uniform(&mut r, 0.0, 1.0)).collect();
        let got = margin_loss(&Tensor::new(vec![5], l.clone()).unwrap(), t % 5).unwrap();
        assert!((got - common::margin_loss(&l, t % 5)).abs() <= 1e-12);
    }
    // perfect prediction costs nothing
    assert_eq!(margin_loss(&Tensor::new(vec![3], vec![0.95, 0.05, 0.0]).unwrap(), 0).unwrap(), 0.0);
}

#[test]
fn metrics_match_longhand() {
    assert!(metrics_error(100, 11) <= 1e-12);
    assert_eq!(kappa_one_iff_diagonal(100, 12), 0);
    assert_eq!(chance_kappa(), 0.0);
}

#[test]
fn tiny_backbone_shapes_and_params() {
    for (patch, bands) in [(9, 16), (11, 8), (7, 5), (13, 3)] {
        let cfg = BackboneConfig::tiny(patch, bands);
        let b = Backbone::build(&cfg).unwrap();
        let (size, ch) = tiny_shapes(patch, bands, &cfg.widths, &cfg.downsample);
        assert_eq!((b.out_size, b.out_channels), (size, ch), "patch {patch}");
        assert_eq!(b.param_count(), tiny_params(bands, &cfg.widths, &cfg.downsample));
        let model = Model::new(ModelConfig::new(cfg.clone(), 3)).unwrap();
        let patch_t = random_tensor(&mut rng(patch as u64), &[patch, patch, bands], 1.0);
        let fm = b.forward(&model.params, &patch_t).unwrap();
        assert_eq!(fm.shape(), [size, size, ch]);
    }
}

#[test]
fn resnet_backbone_builds_and_runs() {
    let cfg = BackboneConfig {
        widths: vec![4, 8, 8, 8],
        ..BackboneConfig::resnet18(9, 3)
    };
    let b = Backbone::build(&cfg).unwrap();
    assert_eq!(b.out_size, 2);
    let model = Model::new(ModelConfig {
        primary_capsules: 8,
        hidden_capsules: vec![8],
        window: 3,
        ..ModelConfig::new(cfg, 2)
    })
    .unwrap();
    let x = random_tensor(&mut rng(1), &[9, 9, 3], 1.0);
    let l = model.lengths(&x).unwrap();
    assert_eq!(l.shape(), [2]);
    assert!(l.data().iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn fixture_is_separable_by_centroids() {
    let (cube, labels) = generate_fixture(&FixtureSpec::new(4, 32, 16, 7)).unwrap();
    let (train, test) = centre_spectra_split(&cube, &labels, 0.1, 7).unwrap();
    let acc = centroid_accuracy(&train, &test, 4);
    assert!(acc >= 0.9, "centroid accuracy {acc}");
}

mod common;

use capsroute::capsules::squash;
use capsroute::data::{extract_patches, metrics, split_indices, HsiCube, LabelMap, Normalizer, SplitSpec};
use capsroute::dwt::{haar_decompose, haar_decompose_padded, haar_reconstruct};
use capsroute::multiscale::{plan_windows, pyramid_output_count};
use capsroute::profile::multiscale_routing_flops;
use capsroute::rng::permutation;
use capsroute::{Tape, Tensor};
use proptest::prelude::*;

fn scene(h: usize, w: usize, bands: usize, classes: usize, labels: Vec<u16>, seed: u64) -> (HsiCube, LabelMap) {
    let mut r = common::rng(seed);
    let values = common::random_vec(&mut r, h * w * bands, 5.0);
    (
        HsiCube::new("p", h, w, bands, values).unwrap(),
        LabelMap::new(h, w, classes, labels).unwrap(),
    )
}

fn labelled_scene() -> impl Strategy<Value = (usize, usize, usize, Vec<u16>)> {
    (2usize..9, 2usize..9, 2usize..5).prop_flat_map(|(h, w, classes)| {
        let labels = prop::collection::vec(0..=classes as u16, h * w);
        (Just(h), Just(w), Just(classes), labels)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn squash_norm_below_one(v in prop::collection::vec(-1e6f64..1e6, 1..20), scale in -300i32..6) {
        let x = Tensor::new(vec![v.len()], v.iter().map(|a| a * 10f64.powi(scale)).collect()).unwrap();
        let y = squash(&x);
        let n = y.norm();
        prop_assert!(n.is_finite() && (0.0..1.0).contains(&n));
        // direction is kept
        let dot: f64 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        prop_assert!(dot >= 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50f64..50.0, 1..40), cols in 1usize..8) {
        let rows = v.len() / cols;
        prop_assume!(rows > 0);
        let x = Tensor::new(vec![rows, cols], v[..rows * cols].to_vec()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let s = tape.softmax(xv, 1).unwrap();
        for row in tape.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn haar_round_trip(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let x = common::random_tensor(&mut common::rng(seed), &[2 * h, 2 * w], 3.0);
        let back = haar_reconstruct(&haar_decompose(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn padded_haar_crops_back(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let x = common::random_tensor(&mut common::rng(seed), &[h, w], 3.0);
        let sb = haar_decompose_padded(&x).unwrap();
        prop_assert_eq!(sb.bands()[0].shape(), &[h.div_ceil(2), w.div_ceil(2)]);
        let back = haar_reconstruct(&sb).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn split_is_a_stratified_partition((h, w, classes, labels) in labelled_scene(), tf in 0.05f64..0.5, vf in 0.0f64..0.4, seed in any::<u64>()) {
        let (cube, labels) = scene(h, w, 2, classes, labels, seed);
        let ds = extract_patches(&cube, &labels, 3).unwrap();
        let counts = ds.class_counts();
        let spec = SplitSpec { train_fraction: tf, val_fraction: vf, seed };
        if counts.contains(&0) {
            // a declared class without samples cannot be stratified
            prop_assert!(split_indices(&ds, &spec).is_err());
            return Ok(());
        }
        let idx = split_indices(&ds, &spec).unwrap();
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        // every class is represented in training
        let train_counts = ds.subset(&idx.train).class_counts();
        for (c, t) in counts.iter().zip(&train_counts) {
            prop_assert!(*t > 0 && t <= c);
        }
        // same seed, same split
        prop_assert_eq!(&idx, &split_indices(&ds, &spec).unwrap());
    }

    #[test]
    fn one_patch_per_labelled_pixel((h, w, classes, labels) in labelled_scene(), n in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let (cube, labels) = scene(h, w, 3, classes, labels, 1);
        let ds = extract_patches(&cube, &labels, n).unwrap();
        prop_assert_eq!(ds.len(), labels.labelled());
        for p in &ds.patches {
            prop_assert_eq!(p.data.shape(), &[n, n, 3]);
            prop_assert_eq!(p.label, labels.get(p.row, p.col));
            let c = n / 2;
            let centre = &p.data.data()[(c * n + c) * 3..(c * n + c + 1) * 3];
            prop_assert_eq!(centre, cube.pixel(p.row, p.col));
        }
    }

    #[test]
    fn normalised_training_data_is_in_unit_range((h, w, classes, labels) in labelled_scene()) {
        let (cube, labels) = scene(h, w, 3, classes, labels, 2);
        let ds = extract_patches(&cube, &labels, 3).unwrap();
        prop_assume!(!ds.is_empty());
        let n = Normalizer::fit(&ds).unwrap();
        for p in &n.apply(&ds).patches {
            prop_assert!(p.data.data().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }
    }

    #[test]
    fn kappa_never_exceeds_accuracy(counts in prop::collection::vec(0u32..40, 9)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let m = metrics(&Tensor::new(vec![3, 3], counts.iter().map(|&c| c as f64).collect()).unwrap()).unwrap();
        prop_assert!(m.kappa <= m.overall_accuracy + 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.overall_accuracy));
        prop_assert!((0.0..=1.0).contains(&m.average_accuracy));
    }

    #[test]
    fn permutation_is_a_bijection(n in 1usize..200, seed in any::<u64>()) {
        let mut p = permutation(n, seed);
        prop_assert_eq!(&p, &permutation(n, seed));
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn windows_stay_in_range(k in 2u32..8, outputs in 1usize..20, window in 1usize..40) {
        let two_p = 1usize << k;
        let m = pyramid_output_count(two_p).unwrap();
        prop_assume!(window <= m);
        let plan = plan_windows(two_p, m, outputs, window).unwrap();
        for j in 0..outputs {
            prop_assert!(plan.indices(j).end <= m);
        }
        // longer windows always cost more
        prop_assert!(multiscale_routing_flops(two_p, outputs, 4, window) < multiscale_routing_flops(two_p, outputs, 4, window + 1));
    }
}

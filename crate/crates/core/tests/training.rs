mod common;

use capsroute::backbone::BackboneConfig;
use capsroute::data::{generate_fixture, FixtureSpec, SplitSpec};
use capsroute::model::{Model, ModelConfig};
use capsroute::pipeline::prepare;
use capsroute::train::{evaluate, mean_loss, train, OptimizerKind, TrainConfig};

use common::suites::{loss_scripts, schedule_mismatches, Scripted};

#[test]
fn schedule_matches_hand_simulation() {
    let (bad, total) = schedule_mismatches(&TrainConfig::default(), 21);
    assert!(total >= 20);
    assert_eq!(bad, 0);
}

#[test]
fn schedule_matches_with_other_patiences() {
    for (halve, stop, max) in [(3, 7, 40), (1, 4, 20), (10, 50, 60), (5, 5, 30)] {
        let cfg = TrainConfig {
            lr_halve_patience: halve,
            early_stop_patience: stop,
            max_epochs: max,
            initial_lr: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(schedule_mismatches(&cfg, 22).0, 0, "{halve}/{stop}/{max}");
    }
}

#[test]
fn plateau_transitions_at_the_expected_epochs() {
    // five improving epochs, then flat: halvings after 10, 20, 30, 40 flat
    // epochs, stop after 50
    let mut t = Scripted {
        losses: loss_scripts(0)[1].clone(),
        lrs: Vec::new(),
        restored: None,
    };
    let h = capsroute::train::run_schedule(&mut t, &TrainConfig::default()).unwrap();
    assert_eq!(h.epochs.len(), 55);
    assert_eq!(h.best_epoch, 5);
    assert_eq!(t.restored, Some(5));
    let changes: Vec<usize> = (1..t.lrs.len()).filter(|&e| t.lrs[e] != t.lrs[e - 1]).map(|e| e + 1).collect();
    assert_eq!(changes, [16, 26, 36, 46]);
    assert_eq!(*t.lrs.last().unwrap(), 0.001 / 16.0);
}

#[test]
fn short_training_learns_and_is_reproducible() {
    let (cube, labels) = generate_fixture(&FixtureSpec::new(3, 14, 6, 3)).unwrap();
    let data = prepare(
        &cube,
        &labels,
        5,
        &SplitSpec {
            train_fraction: 0.3,
            val_fraction: 0.2,
            seed: 1,
        },
    )
    .unwrap();
    let config = ModelConfig {
        primary_capsules: 8,
        hidden_capsules: vec![8],
        window: 3,
        seed: 1,
        ..ModelConfig::new(
            BackboneConfig {
                widths: vec![4, 8],
                ..BackboneConfig::tiny(5, 6)
            },
            3,
        )
    };
    let cfg = TrainConfig {
        max_epochs: 8,
        initial_lr: 0.01,
        seed: 1,
        ..TrainConfig::default()
    };
    let before = mean_loss(&Model::new(config.clone()).unwrap(), &data.train).unwrap();
    let (model, history) = train(Model::new(config.clone()).unwrap(), &data.train, &data.val, &cfg).unwrap();
    let after = mean_loss(&model, &data.train).unwrap();
    assert!(after < before, "{before} -> {after}");
    // the returned parameters are the best-validation ones
    let best = mean_loss(&model, &data.val).unwrap();
    assert!((best - history.best_val_loss).abs() <= 1e-12);

    let (again, h2) = train(Model::new(config.clone()).unwrap(), &data.train, &data.val, &cfg).unwrap();
    assert_eq!(history, h2);
    assert_eq!(model.params, again.params);

    let sgd = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        ..cfg.clone()
    };
    let (_, hs) = train(Model::new(config).unwrap(), &data.train, &data.val, &sgd).unwrap();
    assert_ne!(hs, history);

    // evaluation is the confusion of argmax predictions
    let e = evaluate(&model, &data.test).unwrap();
    assert_eq!(e.predictions.len(), data.test.len());
    for (p, &pred) in data.test.patches.iter().zip(&e.predictions) {
        assert_eq!(pred, model.predict(&p.data).unwrap());
    }
    let correct = data
        .test
        .patches
        .iter()
        .zip(&e.predictions)
        .filter(|(p, &q)| p.label as usize - 1 == q)
        .count();
    assert_eq!(e.metrics.overall_accuracy, correct as f64 / data.test.len() as f64);
    assert_eq!(e.confusion.total() as usize, data.test.len());
}

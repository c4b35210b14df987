//! Generates the synthetic scene, trains the tiny model and reports test accuracy.

use std::time::Instant;

use capsroute::backbone::BackboneConfig;
use capsroute::data::{generate_fixture, FixtureSpec, SplitSpec};
use capsroute::model::{Model, ModelConfig};
use capsroute::pipeline::prepare;
use capsroute::train::{evaluate, train, TrainConfig};

fn main() -> capsroute::Result<()> {
    let (cube, labels) = generate_fixture(&FixtureSpec::new(4, 32, 16, 7))?;
    let spec = SplitSpec {
        train_fraction: 0.1,
        val_fraction: 0.1,
        seed: 7,
    };
    let data = prepare(&cube, &labels, 9, &spec)?;
    println!("train {} val {} test {}", data.train.len(), data.val.len(), data.test.len());

    let model = Model::new(ModelConfig {
        seed: 7,
        ..ModelConfig::new(BackboneConfig::tiny(9, 16), 4)
    })?;
    println!("parameters {}", model.param_count());
    let cfg = TrainConfig {
        max_epochs: 60,
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (model, history) = train(model, &data.train, &data.val, &cfg)?;
    for e in &history.epochs {
        println!("epoch {:3} train {:.4} val {:.4} lr {}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    let eval = evaluate(&model, &data.test)?;
    println!(
        "test OA {:.4} AA {:.4} kappa {:.4} in {:.1}s",
        eval.metrics.overall_accuracy,
        eval.metrics.average_accuracy,
        eval.metrics.kappa,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

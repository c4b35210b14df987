//! Saves an untrained model with its normaliser, reloads it, and renders its
//! predictions on a synthetic scene as a colour map.

use capsroute::backbone::BackboneConfig;
use capsroute::checkpoint::Checkpoint;
use capsroute::cli::predict_map;
use capsroute::data::{generate_fixture, FixtureSpec, SplitSpec};
use capsroute::model::{Model, ModelConfig};
use capsroute::pipeline::prepare;
use capsroute::render::render_ppm;

fn main() -> capsroute::Result<()> {
    let (cube, labels) = generate_fixture(&FixtureSpec::new(3, 16, 8, 2))?;
    let data = prepare(&cube, &labels, 5, &SplitSpec { train_fraction: 0.2, val_fraction: 0.1, seed: 2 })?;
    let model = Model::new(ModelConfig {
        primary_capsules: 16,
        hidden_capsules: vec![16],
        ..ModelConfig::new(BackboneConfig::tiny(5, 8), 3)
    })?;
    let dir = std::env::temp_dir().join("capsroute-checkpoint-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");
    Checkpoint::from_model(&model, Some(data.normalizer)).save(&path)?;
    let ck = Checkpoint::load(&path)?;
    println!("{}: {} parameter elements", path.display(), ck.parameter_elements());
    let (model, normalizer) = ck.into_model()?;
    let map = predict_map(&model, &normalizer.unwrap(), &cube, &labels)?;
    let img = dir.join("map.ppm");
    std::fs::write(&img, render_ppm(labels.height, labels.width, &map)).unwrap();
    println!("wrote {}", img.display());
    Ok(())
}

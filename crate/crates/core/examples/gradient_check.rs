//! Finite-difference check of the full model's loss gradient.

use capsroute::backbone::BackboneConfig;
use capsroute::gradcheck::{check_gradients, GradCheckConfig};
use capsroute::model::{Model, ModelConfig};
use capsroute::params::Bound;
use capsroute::rng::{seeded, unit};
use capsroute::Tensor;

fn main() -> capsroute::Result<()> {
    let model = Model::new(ModelConfig {
        primary_capsules: 8,
        hidden_capsules: vec![8],
        capsule_size: 2,
        window: 3,
        ..ModelConfig::new(
            BackboneConfig {
                widths: vec![2, 4],
                ..BackboneConfig::tiny(5, 3)
            },
            2,
        )
    })?;
    let mut rng = seeded(0);
    let patch = Tensor::new(vec![5, 5, 3], (0..75).map(|_| unit(&mut rng)).collect())?;
    let mut inputs: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
    inputs.push(patch);
    let n = model.params.len();
    let cfg = GradCheckConfig::default();
    let report = check_gradients(
        &inputs,
        |tape, v| {
            let bound = Bound::from_vars(&model.params, v[..n].to_vec())?;
            model.loss_var(tape, &bound, v[n], 1)
        },
        &cfg,
    )?;
    println!(
        "{} coordinates, {} on kinks, max relative error {:.2e}: {}",
        report.checked,
        report.nonsmooth,
        report.max_rel_error,
        if report.passed(&cfg) { "ok" } else { "FAILED" }
    );
    Ok(())
}

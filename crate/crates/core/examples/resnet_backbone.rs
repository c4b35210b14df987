//! Builds the residual backbone with attentive wavelet downsampling and runs
//! one patch through the whole model.

use capsroute::backbone::{Backbone, BackboneConfig};
use capsroute::model::{Model, ModelConfig};
use capsroute::profile::profile;
use capsroute::Tensor;

fn main() -> capsroute::Result<()> {
    let backbone = BackboneConfig {
        widths: vec![8, 16, 16, 32],
        ..BackboneConfig::resnet18(9, 16)
    };
    let b = Backbone::build(&backbone)?;
    println!("layers {:?}", b.layer_kinds());
    println!("output {}x{}x{}, {} backbone parameters", b.out_size, b.out_size, b.out_channels, b.param_count());
    let cfg = ModelConfig::new(backbone, 4);
    let model = Model::new(cfg.clone())?;
    let patch = Tensor::filled(&[9, 9, 16], 0.5);
    println!("class lengths {:?}", model.lengths(&patch)?.data());
    let report = profile(&cfg)?;
    println!("total parameters {}, FLOPs {}", report.total_params, report.total_flops);
    Ok(())
}

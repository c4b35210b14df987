//! Layer-by-layer parameters and FLOPs, and the routing cost as the window grows.

use capsroute::backbone::BackboneConfig;
use capsroute::model::ModelConfig;
use capsroute::profile::profile;

fn main() -> capsroute::Result<()> {
    let cfg = ModelConfig::new(BackboneConfig::tiny(9, 16), 4);
    print!("{}", profile(&cfg)?.to_text());
    println!("\nwindow\tmultiscale\tdynamic\tratio");
    for window in [1, 2, 4, 8, 9, 16, 32] {
        let r = profile(&ModelConfig { window, ..cfg.clone() })?;
        println!(
            "{window}\t{}\t{}\t{:.3}",
            r.multiscale_routing_flops,
            r.dynamic_routing_flops,
            r.routing_ratio()
        );
    }
    Ok(())
}

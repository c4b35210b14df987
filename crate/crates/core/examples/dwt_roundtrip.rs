//! Haar analysis of a small map, perfect reconstruction, and the attentive
//! downsampling weights for two gates.

use capsroute::dwt::{attention_weights, attentive_downsample, haar_decompose, haar_reconstruct, AttentionGate};
use capsroute::Tensor;

fn main() -> capsroute::Result<()> {
    let x = Tensor::new(vec![4, 4], (0..16).map(|v| (v as f64 * 0.7).sin()).collect())?;
    let bands = haar_decompose(&x)?;
    for (name, b) in ["LL", "LH", "HL", "HH"].iter().zip(bands.bands()) {
        println!("{name} {:?}", b.data());
    }
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    println!("band energy {:.6} = 4 x input energy {:.6}", bands.energy(), 4.0 * energy);
    let back = haar_reconstruct(&bands)?;
    println!("reconstruction error {:.2e}", back.max_abs_diff(&x));

    for (label, gate) in [("uniform gate", AttentionGate::zeros()), ("identity gate", AttentionGate::identity())] {
        println!("{label}: alpha {:?}", attention_weights(&bands, &gate)?.data());
    }
    let fm = x.reshape(&[4, 4, 1])?;
    let y = attentive_downsample(&fm, &AttentionGate::identity())?;
    println!("downsampled shape {:?}", y.shape());
    Ok(())
}

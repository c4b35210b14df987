//! Routes the same primary capsules through dynamic and multi-scale routing
//! and prints the coupling structure of each.

use capsroute::capsules::{dynamic_routing_traced, RoutingWeights};
use capsroute::multiscale::{multiscale_route_traced, plan_windows, AttentionParams, MultiscaleParams, PyramidWeights};
use capsroute::rng::{permutation, seeded, unit};
use capsroute::{CapsuleSet, Tensor};

fn random(shape: &[usize], rng: &mut capsroute::rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| unit(rng) - 0.5).collect()).unwrap()
}

fn main() -> capsroute::Result<()> {
    let mut rng = seeded(1);
    let (two_p, nc, outputs) = (8, 4, 3);
    let d = nc * nc;
    let tensors: Vec<Tensor> = (0..two_p).map(|_| random(&[nc, nc], &mut rng)).collect();
    let caps = CapsuleSet::new(&tensors, 0)?;

    let pairs: Vec<Vec<Tensor>> = (0..two_p)
        .map(|_| (0..outputs).map(|_| random(&[d, d], &mut rng)).collect())
        .collect();
    let (dynamic, couplings) = dynamic_routing_traced(&caps, &RoutingWeights::from_pairs(&pairs)?, 3)?;
    println!("dynamic routing, final couplings [inputs x outputs]:");
    for row in couplings.last().unwrap().data().chunks(outputs) {
        println!("  {:?}", row.iter().map(|c| (c * 1e3).round() / 1e3).collect::<Vec<_>>());
    }

    let m = two_p - 2;
    let params = MultiscaleParams {
        pyramid: PyramidWeights {
            levels: (0..2).map(|_| (random(&[nc, nc], &mut rng), random(&[nc, nc], &mut rng))).collect(),
        },
        permutation: permutation(m, 3),
        plan: plan_windows(two_p, m, outputs, 3)?,
        attention: (0..outputs)
            .map(|_| AttentionParams {
                query: random(&[d, d], &mut rng),
                key: random(&[d, d], &mut rng),
            })
            .collect(),
    };
    let (multi, attn) = multiscale_route_traced(&caps, &params)?;
    println!("multi-scale routing, window starts {:?}", params.plan.starts);
    for (j, c) in attn.iter().enumerate() {
        println!("  capsule {j} attention rows sum to {:?}", c.data().chunks(3).map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>());
    }
    for j in 0..outputs {
        let len = |s: &CapsuleSet| s.flat(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("output {j}: dynamic length {:.4}, multi-scale length {:.4}", len(&dynamic), len(&multi));
    }
    Ok(())
}

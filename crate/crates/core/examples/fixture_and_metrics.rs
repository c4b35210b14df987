//! Writes the synthetic scene to disk, reads it back, and scores a nearest
//! class-mean baseline with the accuracy metrics.

use capsroute::data::{extract_patches, generate_fixture, load_cube, split_indices, write_cube, ConfusionMatrix, FixtureSpec, SplitSpec};

fn main() -> capsroute::Result<()> {
    let dir = std::env::temp_dir().join("capsroute-fixture-example");
    let (cube, labels) = generate_fixture(&FixtureSpec::new(4, 32, 16, 7))?;
    let header = write_cube(&dir.join("fixture"), &cube, &labels)?;
    let (cube, labels) = load_cube(&header)?;
    println!("{} : {}x{}x{}, {} labelled pixels", header.display(), cube.height, cube.width, cube.bands, labels.labelled());

    let ds = extract_patches(&cube, &labels, 1)?;
    let idx = split_indices(&ds, &SplitSpec { train_fraction: 0.1, val_fraction: 0.1, seed: 7 })?;
    let mut means = vec![vec![0.0; cube.bands]; labels.classes];
    for &i in &idx.train {
        let p = &ds.patches[i];
        for (m, v) in means[p.label as usize - 1].iter_mut().zip(p.data.data()) {
            *m += v;
        }
    }
    let counts = ds.subset(&idx.train).class_counts();
    for (m, n) in means.iter_mut().zip(counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut cm = ConfusionMatrix::new(labels.classes);
    for &i in &idx.test {
        let p = &ds.patches[i];
        let dist = |m: &Vec<f64>| m.iter().zip(p.data.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let pred = (0..labels.classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
        cm.record(p.label as usize - 1, pred);
    }
    let m = cm.metrics()?;
    println!("nearest class mean: OA {:.4} AA {:.4} kappa {:.4}", m.overall_accuracy, m.average_accuracy, m.kappa);
    Ok(())
}

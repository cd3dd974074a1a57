//! Learned aperture against the random-aperture baselines on synthetic scenes.
//!
//! `cargo run --release --example compare_methods -- [epochs] [eta] [batch] [seeds]`
//!
//! `METHODS` (comma separated) overrides the method list.

use std::time::Instant;

use cassi_ccnn::datacube::generate_synthetic_scene;
use cassi_ccnn::evalbench::{compare, CompareConfig};
use cassi_ccnn::net3d::TrainConfig;

fn main() -> cassi_ccnn::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).map_or(d, String::as_str).to_string();
    let epochs: usize = arg(0, "60").parse().expect("epochs");
    let eta: f64 = arg(1, "0.01").parse().expect("eta");
    let batch: usize = arg(2, "8").parse().expect("batch");
    let seeds: u64 = arg(3, "1").parse().expect("seeds");
    let methods: Vec<String> = std::env::var("METHODS")
        .unwrap_or_else(|_| "ccnn,rand-compress-3dcnn,rand-compress-svm".into())
        .split(',')
        .map(String::from)
        .collect();

    let mut sums = vec![0.0; methods.len()];
    for s in 0..seeds {
        let (cube, labels) = generate_synthetic_scene(48, 48, 8, 5, s)?;
        let cfg = CompareConfig {
            methods: methods.clone(),
            k: 3,
            b: 4,
            train: TrainConfig { eta, epochs, batch, patch_p: 5, ..TrainConfig::default() },
            seed: s,
            ..CompareConfig::default()
        };
        let clock = Instant::now();
        let table = compare(&cube.normalized(), &labels, &cfg)?;
        print!("seed {s} ({:.1}s)\n{}", clock.elapsed().as_secs_f64(), table.to_csv());
        for (acc, row) in sums.iter_mut().zip(&table.rows) {
            *acc += row.oa;
        }
    }
    for (m, s) in methods.iter().zip(sums) {
        println!("mean oa {m}: {:.4}", s / seeds as f64);
    }
    Ok(())
}

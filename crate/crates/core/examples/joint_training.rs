//! Trains a coded aperture together with the classifier and reports the
//! learned blocks and test accuracy.
//!
//! `cargo run --release --example joint_training -- [epochs]`

use cassi_ccnn::ccnn::{build_patch_dataset, predict, train_joint};
use cassi_ccnn::datacube::{generate_synthetic_scene, split_train_test};
use cassi_ccnn::evalbench::{confusion, metrics};
use cassi_ccnn::net3d::TrainConfig;

fn main() -> cassi_ccnn::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).map_or(10, |s| s.parse().expect("epochs"));
    let (cube, labels) = generate_synthetic_scene(32, 32, 8, 4, 1)?;
    let split = split_train_test(&labels, 0.3, 1)?;
    let (train, test) = build_patch_dataset(&cube.normalized(), &labels, &split, 5)?;
    let cfg = TrainConfig { eta: 0.01, epochs, batch: 8, patch_p: 5, seed: 1, ..TrainConfig::default() };
    let out = train_joint(&train, &cfg, 3, 4, labels.classes())?;

    for (e, l) in out.loss_trace.iter().enumerate() {
        println!("epoch {:>3}: loss {l:.4}", e + 1);
    }
    for (k, block) in out.params.apertures.blocks().expect("periodic").iter().enumerate() {
        println!("block {k}: {:.2?}", block.values());
    }
    let pred = test.iter().map(|s| predict(&out.params, s)).collect::<cassi_ccnn::Result<Vec<_>>>()?;
    let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
    let r = metrics(&confusion(&truth, &pred, labels.classes())?)?;
    println!("test OA {:.4}, AA {:.4}, kappa {:.4}", r.oa, r.aa, r.kappa);
    Ok(())
}

//! Finite-difference check of the joint network and aperture gradients.
//!
//! `cargo run --release --example gradient_check`

use cassi_ccnn::ccnn::{joint_grad_check, JointParams, PatchSample};
use cassi_ccnn::coded_aperture::uniform_periodic_set;
use cassi_ccnn::forward_model::Patch;
use cassi_ccnn::net3d::build_network;
use rand::{Rng, SeedableRng};

fn main() -> cassi_ccnn::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let params = JointParams {
        net: build_network(2, 3, 2, 5)?,
        apertures: uniform_periodic_set(2, 2, 5)?,
    };
    let sample = PatchSample {
        scene: Patch::new(3, 3, (0..27).map(|_| rng.random_range(0.0..1.0)).collect())?,
        center: (4, 7),
        label: 2,
    };
    let report = joint_grad_check(&params, &sample, 1e-6, 1e-4)?;
    println!("{report}");
    println!("passed: {}", report.passed());
    Ok(())
}

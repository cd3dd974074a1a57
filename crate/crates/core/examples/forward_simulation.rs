//! Snapshot measurements of a scene, checked against the explicit system matrix.

use cassi_ccnn::coded_aperture::random_full_set;
use cassi_ccnn::datacube::generate_synthetic_scene;
use cassi_ccnn::evalbench::compression_ratio;
use cassi_ccnn::forward_model::{build_system_matrix, simulate_all, NoiseConfig};

fn main() -> cassi_ccnn::Result<()> {
    let (cube, _) = generate_synthetic_scene(24, 24, 8, 4, 0)?;
    let set = random_full_set(3, 24, 24, 8, 0.5, 0)?;
    let clean = simulate_all(&cube, &set, NoiseConfig::None)?;
    let noisy = simulate_all(&cube, &set, NoiseConfig::Gaussian { snr_db: 30.0, seed: 0 })?;

    let h = build_system_matrix(&set, 24, 24, 8)?;
    let via_h = h.apply(cube.values())?;
    let residual = via_h.iter().zip(clean.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("H: {} x {}, {} stored entries", h.rows, h.cols, h.triplets.len());
    println!("max |Hf - y| = {residual:e}");

    let (signal, noise) = clean.values().iter().zip(noisy.values()).fold((0.0, 0.0), |(s, e), (c, n)| (s + c * c, e + (n - c).powi(2)));
    println!("measured SNR: {:.2} dB", 10.0 * (signal / noise).log10());
    println!("compression K/L = {:.3}", compression_ratio(3, 8));
    Ok(())
}

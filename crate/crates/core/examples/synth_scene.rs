//! Generates a synthetic labeled scene and writes it to disk.
//!
//! `cargo run --example synth_scene -- [out_dir]`

use std::path::PathBuf;

use cassi_ccnn::datacube::{generate_synthetic_scene, save_cube, save_labels, split_train_test};
use cassi_ccnn::evalbench::save_map;

fn main() -> cassi_ccnn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    std::fs::create_dir_all(&dir)?;
    let (cube, labels) = generate_synthetic_scene(48, 48, 8, 5, 3)?;
    save_cube(&cube, dir.join("scene.hsc"))?;
    save_labels(&labels, dir.join("gt.pgm"))?;
    save_map(&labels, dir.join("gt.ppm"))?;

    for class in labels.distinct_classes() {
        let pixels: Vec<_> = labels.labeled().into_iter().filter(|&(x, y)| labels.get(x, y) == class).collect();
        let (x, y) = pixels[pixels.len() / 2];
        let spectrum: Vec<String> = cube.spectrum(x, y).iter().map(|v| format!("{v:.3}")).collect();
        println!("class {class}: {:>4} pixels, spectrum at ({x}, {y}) = [{}]", pixels.len(), spectrum.join(", "));
    }
    let split = split_train_test(&labels, 0.3, 0)?;
    println!("split: {} train, {} test", split.train.len(), split.test.len());
    println!("wrote {}", dir.display());
    Ok(())
}

//! Random, blue-noise and periodic coded apertures side by side.

use cassi_ccnn::coded_aperture::{bluenoise_full, random_full, tile, uniform_periodic_set, FullPattern};

fn show(name: &str, p: &FullPattern) {
    println!("{name} ({} open of {}):", p.ones(), p.rows() * p.cols());
    for r in 0..p.rows() {
        let line: String = (0..p.cols()).map(|c| if p.get(r, c) >= 0.5 { '#' } else { '.' }).collect();
        println!("  {line}");
    }
}

fn main() -> cassi_ccnn::Result<()> {
    show("random", &random_full(12, 24, 0.5, 1)?);
    show("blue noise", &bluenoise_full(12, 24, 0.5, 1)?);

    let set = uniform_periodic_set(1, 4, 1)?;
    let block = &set.blocks().expect("periodic")[0];
    println!("uniform 4x4 block: {:.2?}", block.values());
    show("block tiled and thresholded", &tile(block, 12, 24)?);
    Ok(())
}

//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use cassi_ccnn::coded_aperture::CodedApertureSet;
use cassi_ccnn::datacube::HyperCube;
use cassi_ccnn::net3d::{NetworkParams, Padding, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_cube(n: usize, m: usize, l: usize, seed: u64) -> HyperCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HyperCube::new(n, m, l, (0..n * m * l).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Mask value read directly from the stored block or pattern.
pub fn mask(set: &CodedApertureSet, k: usize, row: usize, col: usize) -> f64 {
    match set.blocks() {
        Some(blocks) => {
            let b = blocks[k].side();
            blocks[k].get(row % b, col % b)
        }
        None => match set {
            CodedApertureSet::Full(p) => p[k].get(row, col),
            CodedApertureSet::Periodic(_) => unreachable!(),
        },
    }
}

/// `Y[k][x][y]` by explicit loops, bands summed in ascending order.
pub fn simulate_oracle(cube: &HyperCube, set: &CodedApertureSet) -> Vec<f64> {
    let (n, m, l) = (cube.n(), cube.m(), cube.bands());
    let mut out = vec![0.0; set.snapshots() * n * m];
    for k in 0..set.snapshots() {
        for x in 0..n {
            for y in 0..m {
                let mut acc = 0.0;
                for band in 0..l {
                    acc += cube.get(x, y, band) * mask(set, k, x, y + band);
                }
                out[(k * n + x) * m + y] = acc;
            }
        }
    }
    out
}

/// Direct 3D convolution over a `[d1][d2][d3][c]` array, then ReLU.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    input: &[f64],
    shape: [usize; 4],
    weights: &[f64],
    biases: &[f64],
    kernel: [usize; 3],
    filters: usize,
    padding: Padding,
) -> (Vec<f64>, [usize; 4]) {
    let [d1, d2, d3, cin] = shape;
    let pad = |k: usize| match padding {
        Padding::Same => (k as i64 - 1) / 2,
        Padding::Valid => 0,
    };
    let out_dim = |d: usize, k: usize| match padding {
        Padding::Same => d,
        Padding::Valid => d + 1 - k,
    };
    let (o1, o2, o3) = (out_dim(d1, kernel[0]), out_dim(d2, kernel[1]), out_dim(d3, kernel[2]));
    let mut out = vec![0.0; o1 * o2 * o3 * filters];
    for f in 0..filters {
        for z in 0..o1 {
            for y in 0..o2 {
                for x in 0..o3 {
                    let mut acc = biases[f];
                    for a in 0..kernel[0] {
                        for b in 0..kernel[1] {
                            for c in 0..kernel[2] {
                                let iz = z as i64 + a as i64 - pad(kernel[0]);
                                let iy = y as i64 + b as i64 - pad(kernel[1]);
                                let ix = x as i64 + c as i64 - pad(kernel[2]);
                                if iz < 0 || iy < 0 || ix < 0 || iz >= d1 as i64 || iy >= d2 as i64 || ix >= d3 as i64 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let v = input[((iz as usize * d2 + iy as usize) * d3 + ix as usize) * cin + ci];
                                    let w = weights[(((f * kernel[0] + a) * kernel[1] + b) * kernel[2] + c) * cin + ci];
                                    acc += v * w;
                                }
                            }
                        }
                    }
                    out[((z * o2 + y) * o3 + x) * filters + f] = acc.max(0.0);
                }
            }
        }
    }
    (out, [o1, o2, o3, filters])
}

/// Logits of a ReLU network computed without any library kernels.
pub fn network_oracle(params: &NetworkParams, input: &Tensor4) -> Vec<f64> {
    let mut data = input.data().to_vec();
    let mut shape = input.shape();
    for layer in &params.conv {
        let (d, s) = conv_oracle(&data, shape, &layer.weights, &layer.biases, layer.kernel, layer.filters, params.topology.padding);
        data = d;
        shape = s;
    }
    let fc = &params.fc;
    (0..fc.outputs)
        .map(|o| fc.biases[o] + (0..fc.inputs).map(|i| fc.weights[o * fc.inputs + i] * data[i]).sum::<f64>())
        .collect()
}

/// Mean periodogram over the lowest 10% of nonzero frequencies by radius,
/// computed with a direct 2D DFT.
pub fn low_frequency_energy(values: &[f64], rows: usize, cols: usize) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut bins: Vec<(f64, f64)> = Vec::with_capacity(rows * cols);
    for u in 0..rows {
        for v in 0..cols {
            if u == 0 && v == 0 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..rows {
                for y in 0..cols {
                    let phase = -2.0 * std::f64::consts::PI * ((u * x) as f64 / rows as f64 + (v * y) as f64 / cols as f64);
                    let t = values[x * cols + y] - mean;
                    re += t * phase.cos();
                    im += t * phase.sin();
                }
            }
            let fu = u.min(rows - u) as f64 / rows as f64;
            let fv = v.min(cols - v) as f64 / cols as f64;
            bins.push(((fu * fu + fv * fv).sqrt(), (re * re + im * im) / (rows * cols) as f64));
        }
    }
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = (bins.len() / 10).max(1);
    bins[..take].iter().map(|b| b.1).sum::<f64>() / take as f64
}

/// Mean spectral angle over pixel pairs, split into same-class and
/// different-class pairs.
pub fn spectral_angle_means(spectra: &[(u8, Vec<f64>)]) -> (f64, f64) {
    let angle = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0).acos()
    };
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..spectra.len() {
        for j in i + 1..spectra.len() {
            let a = angle(&spectra[i].1, &spectra[j].1);
            if spectra[i].0 == spectra[j].0 {
                within += a;
                nw += 1;
            } else {
                between += a;
                nb += 1;
            }
        }
    }
    (within / nw as f64, between / nb as f64)
}

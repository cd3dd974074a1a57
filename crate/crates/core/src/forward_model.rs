//! Discrete DD-CASSI measurement model.
//!
//! Snapshot `k` of a cube `F` (`n x m x l`) coded by the mask `T^k`
//! (`n x (m + l - 1)`) is
//!
//! ```text
//! Y^k[x][y] = sum_{band = 0}^{l - 1} F[x][y][band] * T^k[x][y + band]
//! ```
//!
//! i.e. the two dispersers shear the mask by one column per band while the
//! detector keeps the scene's spatial grid. Sums always run in ascending band
//! order, so the full simulation, the patch model and the system matrix agree
//! bit-for-bit.
//!
//! Vectorization (`vec`) is band-major then row-major: voxel `(x, y, band)` is
//! entry `band * n * m + x * m + y`, and measurement `(k, x, y)` is entry
//! `k * n * m + x * m + y`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coded_aperture::CodedApertureSet;
use crate::datacube::{decode_f64_payload, split_header, HyperCube};
use crate::error::{invalid, Error, Result};
use crate::seed;

/// Stack of `k` detector snapshots over an `n x m` grid, snapshot-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementCube {
    n: usize,
    m: usize,
    k: usize,
    values: Vec<f64>,
}

impl MeasurementCube {
    pub fn new(n: usize, m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || k == 0 {
            return invalid(format!("measurement dimensions must be positive, got {n}x{m}x{k}"));
        }
        if values.len() != n * m * k {
            return invalid(format!("measurement payload has {} values, expected {}", values.len(), n * m * k));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement value".into()));
        }
        Ok(Self { n, m, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn snapshots(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.values[k * self.n * self.m + x * self.m + y]
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        let s = self.n * self.m;
        &self.values[k * s..(k + 1) * s]
    }
}

/// A `p x p` spatial window with `depth` slices (snapshots or bands),
/// stored depth-major: entry `(d, row, col)` is `(d * p + row) * p + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    p: usize,
    depth: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn new(p: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || depth == 0 {
            return invalid("patch dimensions must be positive");
        }
        if values.len() != p * p * depth {
            return invalid(format!("patch {p}x{p}x{depth} needs {} values, got {}", p * p * depth, values.len()));
        }
        Ok(Self { p, depth, values })
    }

    pub fn zeros(p: usize, depth: usize) -> Self {
        Self {
            p,
            depth,
            values: vec![0.0; p * p * depth],
        }
    }

    pub fn side(&self) -> usize {
        self.p
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, d: usize, row: usize, col: usize) -> usize {
        (d * self.p + row) * self.p + col
    }

    #[inline]
    pub fn get(&self, d: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(d, row, col)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseConfig {
    #[default]
    None,
    /// Zero-mean i.i.d. noise at the given signal-RMS to noise-RMS ratio.
    Gaussian { snr_db: f64, seed: u64 },
}

fn check_cube_aperture(cube: &HyperCube, set: &CodedApertureSet) -> Result<()> {
    set.check_compatible(cube.n(), cube.m(), cube.bands())
}

fn snapshot_into(cube: &HyperCube, set: &CodedApertureSet, k: usize, out: &mut [f64]) {
    let (n, m, l) = (cube.n(), cube.m(), cube.bands());
    let f = cube.values();
    for x in 0..n {
        for y in 0..m {
            let mut acc = 0.0;
            for band in 0..l {
                acc += f[band * n * m + x * m + y] * set.entry_fast(k, x as i64, (y + band) as i64);
            }
            out[x * m + y] = acc;
        }
    }
}

/// Noiseless `n x m` detector plane for snapshot `k`.
pub fn simulate_snapshot(cube: &HyperCube, set: &CodedApertureSet, k: usize) -> Result<Vec<f64>> {
    check_cube_aperture(cube, set)?;
    if k >= set.snapshots() {
        return invalid(format!("snapshot {k} out of range 0..{}", set.snapshots()));
    }
    let mut out = vec![0.0; cube.n() * cube.m()];
    snapshot_into(cube, set, k, &mut out);
    Ok(out)
}

/// All `K` snapshots, optionally with additive Gaussian detector noise.
pub fn simulate_all(cube: &HyperCube, set: &CodedApertureSet, noise: NoiseConfig) -> Result<MeasurementCube> {
    check_cube_aperture(cube, set)?;
    let plane = cube.n() * cube.m();
    let k = set.snapshots();
    let mut values = vec![0.0; plane * k];
    for (snap, out) in values.chunks_mut(plane).enumerate() {
        snapshot_into(cube, set, snap, out);
    }
    if let NoiseConfig::Gaussian { snr_db, seed } = noise {
        if !snr_db.is_finite() {
            return invalid("snr_db must be finite");
        }
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        let sigma = rms * 10f64.powf(-snr_db / 20.0);
        if sigma > 0.0 {
            let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut rng = seed::rng(seed, "detector-noise");
            for v in &mut values {
                *v += dist.sample(&mut rng);
            }
        }
    }
    MeasurementCube::new(cube.n(), cube.m(), k, values)
}

/// Sparse `H` in triplet form, rows `k * n * m + x * m + y`, columns per `vec`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` sorted by `(row, col)`; zero-valued mask entries
    /// are kept as structural nonzeros.
    pub triplets: Vec<(usize, usize, f64)>,
}

/// Dense exports above this many entries are refused.
pub const DENSE_LIMIT: u64 = 1 << 32;

impl SystemMatrix {
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.cols {
            return invalid(format!("vector has {} entries, matrix has {} columns", f.len(), self.cols));
        }
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.triplets {
            y[r] += v * f[c];
        }
        Ok(y)
    }

    pub fn nonzeros_in_row(&self, row: usize) -> usize {
        let start = self.triplets.partition_point(|t| t.0 < row);
        let end = self.triplets.partition_point(|t| t.0 <= row);
        end - start
    }

    pub fn to_dense(&self) -> Result<Vec<f64>> {
        if (self.rows as u64).saturating_mul(self.cols as u64) > DENSE_LIMIT {
            return invalid(format!("dense export of {}x{} refused", self.rows, self.cols));
        }
        let mut out = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.triplets {
            out[r * self.cols + c] = v;
        }
        Ok(out)
    }

    /// Writes `row col value` lines, 0-based.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        for &(r, c, v) in &self.triplets {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }
}

pub fn build_system_matrix(set: &CodedApertureSet, n: usize, m: usize, l: usize) -> Result<SystemMatrix> {
    if n == 0 || m == 0 || l == 0 {
        return invalid("cube dimensions must be positive");
    }
    set.check_compatible(n, m, l)?;
    let k = set.snapshots();
    let plane = n * m;
    let mut triplets = Vec::with_capacity(k * plane * l);
    for snap in 0..k {
        for x in 0..n {
            for y in 0..m {
                let row = snap * plane + x * m + y;
                for band in 0..l {
                    let v = set.entry_fast(snap, x as i64, (y + band) as i64);
                    triplets.push((row, band * plane + x * m + y, v));
                }
            }
        }
    }
    Ok(SystemMatrix {
        rows: k * plane,
        cols: plane * l,
        triplets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialWavelet {
    #[default]
    Haar,
    Symmlet8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralTransform {
    #[default]
    Dct,
}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.size + c]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.size)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.size;
        let mut data = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c];
            }
        }
        Self { size: n, data }
    }

    /// `max |(A^T A - I)_{ij}|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.size;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|r| self.get(r, i) * self.get(r, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// `a (x) b` for square matrices.
pub fn kronecker(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (na, nb) = (a.size, b.size);
    let n = na * nb;
    let mut data = vec![0.0; n * n];
    for ar in 0..na {
        for ac in 0..na {
            let s = a.get(ar, ac);
            for br in 0..nb {
                for bc in 0..nb {
                    data[(ar * nb + br) * n + ac * nb + bc] = s * b.get(br, bc);
                }
            }
        }
    }
    DenseMatrix { size: n, data }
}

/// Orthonormal DCT-II synthesis matrix: column `k` is the `k`-th cosine atom.
pub fn dct_basis(l: usize) -> DenseMatrix {
    let mut data = vec![0.0; l * l];
    let lf = l as f64;
    for band in 0..l {
        for k in 0..l {
            let alpha = if k == 0 { (1.0 / lf).sqrt() } else { (2.0 / lf).sqrt() };
            data[band * l + k] =
                alpha * (std::f64::consts::PI * (2.0 * band as f64 + 1.0) * k as f64 / (2.0 * lf)).cos();
        }
    }
    DenseMatrix { size: l, data }
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Symmlet-8 decomposition low-pass filter.
const SYM8: [f64; 16] = [
    -0.003_382_415_951_006_125_6,
    -0.000_542_132_331_791_148_1,
    0.031_695_087_811_492_98,
    0.007_607_487_324_917_605,
    -0.143_294_238_350_809_7,
    -0.061_273_359_067_658_524,
    0.481_359_651_258_372_2,
    0.777_185_751_700_523_5,
    0.364_441_894_835_331_4,
    -0.051_945_838_107_709_04,
    -0.027_219_029_917_056_003,
    0.049_137_179_673_607_506,
    0.003_808_752_013_890_615,
    -0.014_952_258_337_048_23,
    -0.000_302_920_514_721_366_8,
    0.001_889_950_332_759_460_9,
];

fn periodized_dwt(signal: &[f64], lowpass: &[f64]) -> Vec<f64> {
    let taps = lowpass.len();
    let highpass: Vec<f64> = (0..taps)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s * lowpass[taps - 1 - k]
        })
        .collect();
    let mut out = signal.to_vec();
    let mut len = signal.len();
    while len > 1 {
        let half = len / 2;
        let mut next = vec![0.0; len];
        for i in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for k in 0..taps {
                let v = out[(2 * i + k) % len];
                a += lowpass[k] * v;
                d += highpass[k] * v;
            }
            next[i] = a;
            next[half + i] = d;
        }
        out[..len].copy_from_slice(&next);
        len = half;
    }
    out
}

/// 1D multi-level periodized wavelet synthesis matrix (columns are atoms).
pub fn wavelet_basis(n: usize, wavelet: SpatialWavelet) -> Result<DenseMatrix> {
    if n == 0 || !n.is_power_of_two() {
        return invalid(format!("wavelet basis needs a power-of-two length, got {n}"));
    }
    let filter: &[f64] = match wavelet {
        SpatialWavelet::Haar => &HAAR,
        SpatialWavelet::Symmlet8 => &SYM8,
    };
    // Analysis matrix column i is DWT(e_i); synthesis is its transpose.
    let mut analysis = vec![0.0; n * n];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for (r, v) in periodized_dwt(&e, filter).into_iter().enumerate() {
            analysis[r * n + i] = v;
        }
    }
    Ok(DenseMatrix { size: n, data: analysis }.transpose())
}

/// `Psi = Psi1 (x) Psi2`: separable 2D wavelet over space times DCT over bands.
///
/// Rows and columns are indexed spatial-major, `(x * m + y) * l + band`, which
/// is the natural Kronecker order; it differs from the band-major `vec` used
/// by the measurement model.
pub fn build_basis(
    n: usize,
    m: usize,
    l: usize,
    spatial: SpatialWavelet,
    spectral: SpectralTransform,
) -> Result<DenseMatrix> {
    if l == 0 {
        return invalid("band count must be positive");
    }
    let rows = wavelet_basis(n, spatial)?;
    let cols = wavelet_basis(m, spatial)?;
    let spatial_basis = kronecker(&rows, &cols);
    let spectral_basis = match spectral {
        SpectralTransform::Dct => dct_basis(l),
    };
    Ok(kronecker(&spatial_basis, &spectral_basis))
}

fn check_patch_args(p: usize, x0: usize, y0: usize, n: usize, m: usize) -> Result<()> {
    if p % 2 == 0 {
        return invalid(format!("patch size must be odd, got {p}"));
    }
    if x0 >= n || y0 >= m {
        return invalid(format!("centre ({x0}, {y0}) outside {n}x{m} image"));
    }
    Ok(())
}

/// Visits the window `[x0 - q, x0 + q] x [y0 - q, y0 + q]`, yielding patch
/// coordinates with the in-image source coordinates.
fn window(x0: usize, y0: usize, p: usize, n: usize, m: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let q = (p / 2) as i64;
    (0..p).flat_map(move |r| {
        (0..p).filter_map(move |c| {
            let x = x0 as i64 + r as i64 - q;
            let y = y0 as i64 + c as i64 - q;
            (x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < m).then_some((r, c, x as usize, y as usize))
        })
    })
}

/// `p x p x K` measurement window; samples outside the image are zero.
pub fn extract_patch(meas: &MeasurementCube, x0: usize, y0: usize, p: usize) -> Result<Patch> {
    check_patch_args(p, x0, y0, meas.n, meas.m)?;
    let mut patch = Patch::zeros(p, meas.k);
    for (r, c, x, y) in window(x0, y0, p, meas.n, meas.m) {
        for k in 0..meas.k {
            let i = patch.index(k, r, c);
            patch.values[i] = meas.get(k, x, y);
        }
    }
    Ok(patch)
}

/// `p x p x L` scene window; voxels outside the image are zero.
pub fn extract_scene_patch(cube: &HyperCube, x0: usize, y0: usize, p: usize) -> Result<Patch> {
    check_patch_args(p, x0, y0, cube.n(), cube.m())?;
    let mut patch = Patch::zeros(p, cube.bands());
    for (r, c, x, y) in window(x0, y0, p, cube.n(), cube.m()) {
        for band in 0..cube.bands() {
            let i = patch.index(band, r, c);
            patch.values[i] = cube.get(x, y, band);
        }
    }
    Ok(patch)
}

/// Codes a scene patch centred at `(x0, y0)`:
/// `Y[k][r][c] = sum_band F[band][r][c] * T^k[x0 + r - q][y0 + c - q + band]`.
///
/// Periodic sets accept any centre. Full sets read the stored mask and skip
/// window positions outside it, which only ever meet zero padding.
pub fn patch_forward(scene: &Patch, set: &CodedApertureSet, x0: usize, y0: usize) -> Result<Patch> {
    let p = scene.side();
    if p % 2 == 0 {
        return invalid(format!("patch size must be odd, got {p}"));
    }
    let k = set.snapshots();
    let l = scene.depth();
    let q = (p / 2) as i64;
    let (rows, cols) = match set {
        CodedApertureSet::Periodic(_) => (i64::MIN..i64::MAX, i64::MIN..i64::MAX),
        CodedApertureSet::Full(pats) => (0..pats[0].rows() as i64, 0..pats[0].cols() as i64),
    };
    let mut out = Patch::zeros(p, k);
    for snap in 0..k {
        for r in 0..p {
            let x = x0 as i64 + r as i64 - q;
            for c in 0..p {
                let y = y0 as i64 + c as i64 - q;
                let mut acc = 0.0;
                for band in 0..l {
                    let col = y + band as i64;
                    let t = if rows.contains(&x) && cols.contains(&col) {
                        set.entry_fast(snap, x, col)
                    } else {
                        0.0
                    };
                    acc += scene.get(band, r, c) * t;
                }
                let i = out.index(snap, r, c);
                out.values[i] = acc;
            }
        }
    }
    Ok(out)
}

const MEAS_MAGIC: &[u8] = b"MSC1\n";

#[derive(Serialize, Deserialize)]
struct MeasHeader {
    n: usize,
    m: usize,
    k: usize,
    dtype: String,
}

pub fn encode_measurements(meas: &MeasurementCube) -> Result<Vec<u8>> {
    let header = MeasHeader {
        n: meas.n,
        m: meas.m,
        k: meas.k,
        dtype: "f64le".into(),
    };
    let mut out = MEAS_MAGIC.to_vec();
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for v in &meas.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_measurements(bytes: &[u8]) -> Result<MeasurementCube> {
    let (h, payload): (MeasHeader, &[u8]) = split_header(bytes, MEAS_MAGIC)?;
    if h.dtype != "f64le" {
        return Err(Error::Format {
            field: "dtype".into(),
            message: format!("unsupported dtype {:?}", h.dtype),
        });
    }
    if h.n == 0 || h.m == 0 || h.k == 0 {
        return invalid(format!("header dimensions must be positive, got n={} m={} k={}", h.n, h.m, h.k));
    }
    let values = decode_f64_payload(payload, h.n * h.m * h.k)?;
    MeasurementCube::new(h.n, h.m, h.k, values)
}

pub fn save_measurements(meas: &MeasurementCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_measurements(meas)?)?;
    Ok(())
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<MeasurementCube> {
    decode_measurements(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coded_aperture::{random_full_set, BasicBlock, FullPattern};

    fn ones_full(k: usize, n: usize, cols: usize, v: f64) -> CodedApertureSet {
        CodedApertureSet::full((0..k).map(|_| FullPattern::new(n, cols, vec![v; n * cols]).unwrap()).collect()).unwrap()
    }

    #[test]
    fn constant_inputs() {
        let cube = HyperCube::new(3, 4, 3, vec![1.0; 36]).unwrap();
        let y = simulate_snapshot(&cube, &ones_full(1, 3, 6, 1.0), 0).unwrap();
        assert!(y.iter().all(|&v| v == 3.0));
        let y = simulate_snapshot(&cube, &ones_full(1, 3, 6, 0.0), 0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(simulate_snapshot(&cube, &ones_full(1, 3, 5, 1.0), 0).is_err());
    }

    #[test]
    fn single_snapshot_and_noiseless_stack() {
        let cube = HyperCube::new(4, 4, 2, (0..32).map(|i| (i as f64).sin().abs()).collect()).unwrap();
        let set = random_full_set(1, 4, 4, 2, 0.5, 3).unwrap();
        let all = simulate_all(&cube, &set, NoiseConfig::None).unwrap();
        assert_eq!(all.plane(0), simulate_snapshot(&cube, &set, 0).unwrap().as_slice());
    }

    #[test]
    fn system_matrix_rows_sum_to_band_count_for_open_mask() {
        let h = build_system_matrix(&ones_full(2, 3, 5, 1.0), 3, 3, 3).unwrap();
        let dense = h.to_dense().unwrap();
        for row in dense.chunks(h.cols) {
            assert_eq!(row.iter().sum::<f64>(), 3.0);
        }
        let mut buf = Vec::new();
        h.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "0 0 1");
        assert_eq!(text.lines().count(), 2 * 9 * 3);
    }

    #[test]
    fn dense_export_guard() {
        let h = SystemMatrix {
            rows: 1 << 20,
            cols: 1 << 13,
            triplets: Vec::new(),
        };
        assert!(h.to_dense().is_err());
    }

    #[test]
    fn dct_of_constant_profile_is_dc_only() {
        let psi = dct_basis(6);
        let coeffs = psi.transpose().mul_vec(&[2.5; 6]);
        assert!((coeffs[0] - 2.5 * 6f64.sqrt()).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn small_bases_are_orthonormal() {
        let psi = build_basis(2, 2, 2, SpatialWavelet::Haar, SpectralTransform::Dct).unwrap();
        assert_eq!(psi.size, 8);
        assert!(psi.orthonormality_error() <= 1e-12);
        let psi = build_basis(4, 8, 3, SpatialWavelet::Symmlet8, SpectralTransform::Dct).unwrap();
        assert!(psi.orthonormality_error() <= 1e-12);
        assert!(build_basis(3, 4, 2, SpatialWavelet::Haar, SpectralTransform::Dct).is_err());
    }

    #[test]
    fn patch_geometry() {
        let cube = HyperCube::new(5, 5, 1, vec![1.0; 25]).unwrap();
        let patch = extract_scene_patch(&cube, 0, 0, 3).unwrap();
        assert_eq!(patch.values().iter().filter(|&&v| v == 0.0).count(), 5);
        let centre = extract_scene_patch(&cube, 2, 3, 1).unwrap();
        assert_eq!(centre.values(), &[1.0]);
        assert!(extract_scene_patch(&cube, 0, 0, 4).is_err());
        assert!(extract_scene_patch(&cube, 5, 0, 3).is_err());
    }

    #[test]
    fn open_blocks_give_band_sums() {
        let scene = Patch::new(3, 2, (0..18).map(f64::from).collect()).unwrap();
        let set = CodedApertureSet::periodic(vec![BasicBlock::filled(2, 1.0).unwrap()]).unwrap();
        let y = patch_forward(&scene, &set, 4, 4).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(y.get(0, r, c), scene.get(0, r, c) + scene.get(1, r, c));
            }
        }
    }

    #[test]
    fn measurement_file_round_trip() {
        let meas = MeasurementCube::new(2, 3, 2, (0..12).map(|i| i as f64 / 3.0).collect()).unwrap();
        let bytes = encode_measurements(&meas).unwrap();
        assert!(bytes.starts_with(b"MSC1\n{\"n\":2,\"m\":3,\"k\":2,\"dtype\":\"f64le\"}\n"));
        assert_eq!(decode_measurements(&bytes).unwrap(), meas);
        assert!(decode_measurements(&bytes[..bytes.len() - 1]).is_err());
    }
}

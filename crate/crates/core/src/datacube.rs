//! Hyperspectral cubes, ground-truth label maps, synthetic scenes, train/test
//! splitting and the on-disk formats for cubes (`.hsc`) and labels (PGM).
//!
//! Spatial coordinates are `(x, y)` with `x` indexing rows (`0..n`) and `y`
//! indexing columns (`0..m`). Cubes are stored band-sequential, row-major
//! within a band: voxel `(x, y, band)` lives at `band * n * m + x * m + y`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::seed;

/// Scene radiance volume of `n` rows, `m` columns and `l` bands.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    n: usize,
    m: usize,
    l: usize,
    values: Vec<f64>,
}

impl HyperCube {
    pub fn new(n: usize, m: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || l == 0 {
            return invalid(format!("cube dimensions must be positive, got {n}x{m}x{l}"));
        }
        if values.len() != n * m * l {
            return invalid(format!(
                "cube payload has {} values, expected {}",
                values.len(),
                n * m * l
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube value at flat index {pos}")));
        }
        Ok(Self { n, m, l, values })
    }

    pub fn zeros(n: usize, m: usize, l: usize) -> Result<Self> {
        Self::new(n, m, l, vec![0.0; n * m * l])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bands(&self) -> usize {
        self.l
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, band: usize) -> usize {
        band * self.n * self.m + x * self.m + y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, band: usize) -> f64 {
        self.values[self.index(x, y, band)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, band: usize, v: f64) {
        let i = self.index(x, y, band);
        self.values[i] = v;
    }

    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.l).map(|b| self.get(x, y, b)).collect()
    }

    /// Rescales so the cube maximum is 1. A cube whose maximum is not
    /// positive is returned unchanged.
    pub fn normalized(&self) -> Self {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max <= 0.0 || !max.is_finite() {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| v / max).collect(),
            ..self.clone()
        }
    }
}

/// Ground truth over the cube's spatial grid; `0` marks an unlabeled pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    m: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, m: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if n == 0 || m == 0 {
            return invalid(format!("label map dimensions must be positive, got {n}x{m}"));
        }
        if labels.len() != n * m {
            return invalid(format!(
                "label map has {} entries, expected {}",
                labels.len(),
                n * m
            ));
        }
        if let Some(bad) = labels.iter().find(|&&v| usize::from(v) > classes) {
            return invalid(format!("label {bad} exceeds class count {classes}"));
        }
        Ok(Self {
            n,
            m,
            classes,
            labels,
        })
    }

    /// Builds a map whose class count is the largest label present.
    pub fn from_labels(n: usize, m: usize, labels: Vec<u8>) -> Result<Self> {
        let classes = labels.iter().copied().max().unwrap_or(0) as usize;
        Self::new(n, m, classes, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[x * self.m + y]
    }

    /// Labeled pixel coordinates in `(x, y)` scan order.
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for x in 0..self.n {
            for y in 0..self.m {
                if self.get(x, y) != 0 {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    pub fn distinct_classes(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().filter(|&v| v != 0).collect()
    }

    pub fn check_matches(&self, cube: &HyperCube) -> Result<()> {
        if self.n != cube.n() || self.m != cube.m() {
            return invalid(format!(
                "label map is {}x{} but cube is {}x{}",
                self.n,
                self.m,
                cube.n(),
                cube.m()
            ));
        }
        Ok(())
    }
}

/// Disjoint train/test partition of the labeled pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Voronoi-region scene with one smooth spectral signature per class.
///
/// Region borders are left unlabeled (at least 1% of pixels). Each class gets a
/// signature built from 2 or 3 Gaussian bumps over the band index, scaled into
/// `[0.05, 1]`. Each pixel's spectrum is scaled by one multiplicative jitter
/// drawn from `[0.9, 1.1]`.
pub fn generate_synthetic_scene(
    n: usize,
    m: usize,
    l: usize,
    classes: usize,
    seed: u64,
) -> Result<(HyperCube, LabelMap)> {
    if n < 8 || m < 8 {
        return invalid(format!("synthetic scene needs n, m >= 8, got {n}x{m}"));
    }
    if l < 2 {
        return invalid(format!("synthetic scene needs at least 2 bands, got {l}"));
    }
    if !(2..=16).contains(&classes) {
        return invalid(format!("classes must be in 2..=16, got {classes}"));
    }

    let mut rng = seed::rng(seed, "synthetic-scene");
    let sites = place_sites(n, m, classes, &mut rng);

    // Nearest site wins; ties go to the lower site index.
    let mut region = vec![0usize; n * m];
    for x in 0..n {
        for y in 0..m {
            let mut best = (usize::MAX, 0usize);
            for (s, &(sx, sy)) in sites.iter().enumerate() {
                let d = sx.abs_diff(x).pow(2) + sy.abs_diff(y).pow(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            region[x * m + y] = best.1;
        }
    }

    let mut border = vec![false; n * m];
    for x in 0..n {
        for y in 0..m {
            let r = region[x * m + y];
            border[x * m + y] = neighbours(x, y, n, m).any(|(a, b)| region[a * m + b] != r);
        }
    }
    let min_unlabeled = (n * m).div_ceil(100);
    while border.iter().filter(|&&b| b).count() < min_unlabeled {
        let grown: Vec<bool> = (0..n * m)
            .map(|i| border[i] || neighbours(i / m, i % m, n, m).any(|(a, b)| border[a * m + b]))
            .collect();
        if grown == border {
            break;
        }
        border = grown;
    }

    let mut labels: Vec<u8> = (0..n * m)
        .map(|i| if border[i] { 0 } else { (region[i] + 1) as u8 })
        .collect();
    // A region swallowed entirely by border marking keeps its site pixel.
    for (s, &(sx, sy)) in sites.iter().enumerate() {
        if !labels.contains(&((s + 1) as u8)) {
            labels[sx * m + sy] = (s + 1) as u8;
        }
    }

    let signatures = class_signatures(classes, l, &mut rng);
    let mut values = vec![0.0; n * m * l];
    for x in 0..n {
        for y in 0..m {
            let sig = &signatures[region[x * m + y]];
            let jitter: f64 = rng.random_range(0.9..=1.1);
            for (band, &s) in sig.iter().enumerate() {
                values[band * n * m + x * m + y] = s * jitter;
            }
        }
    }

    Ok((
        HyperCube::new(n, m, l, values)?,
        LabelMap::new(n, m, classes, labels)?,
    ))
}

fn neighbours(
    x: usize,
    y: usize,
    n: usize,
    m: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    cand.into_iter().filter(move |&(a, b)| a < n && b < m)
}

fn place_sites<R: Rng>(n: usize, m: usize, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut min_d2 = ((n * m) as f64 / count as f64) / 2.0;
    loop {
        let mut sites: Vec<(usize, usize)> = Vec::with_capacity(count);
        let mut attempts = 0;
        while sites.len() < count && attempts < 2000 {
            attempts += 1;
            let cand = (rng.random_range(0..n), rng.random_range(0..m));
            let far_enough = sites.iter().all(|&(a, b)| {
                let d2 = (a.abs_diff(cand.0).pow(2) + b.abs_diff(cand.1).pow(2)) as f64;
                d2 >= min_d2 && d2 > 0.0
            });
            if far_enough {
                sites.push(cand);
            }
        }
        if sites.len() == count {
            return sites;
        }
        min_d2 /= 2.0;
    }
}

fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn class_signatures<R: Rng>(classes: usize, l: usize, rng: &mut R) -> Vec<Vec<f64>> {
    const MIN_ANGLE: f64 = 0.05;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while out.len() < classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..200 {
            let cand = gaussian_bump_signature(l, rng);
            let sep = out
                .iter()
                .map(|s| spectral_angle(s, &cand))
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(b, _)| sep > *b) {
                best = Some((sep, cand));
            }
            if sep >= MIN_ANGLE {
                break;
            }
        }
        out.push(best.expect("at least one candidate").1);
    }
    out
}

fn gaussian_bump_signature<R: Rng>(l: usize, rng: &mut R) -> Vec<f64> {
    let bumps = rng.random_range(2..=3);
    let span = (l - 1) as f64;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let centre = rng.random_range(0.0..=span);
            let width = rng.random_range(0.15..=0.5) * l as f64;
            let amp = rng.random_range(0.2..=1.0);
            (centre, width, amp)
        })
        .collect();
    let raw: Vec<f64> = (0..l)
        .map(|b| {
            params
                .iter()
                .map(|&(c, w, a)| a * (-(b as f64 - c).powi(2) / (2.0 * w * w)).exp())
                .sum()
        })
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.iter().map(|v| 0.05 + 0.95 * v / max).collect()
}

/// Uniform random split of the labeled pixels: `round(fraction * labeled)`
/// pixels go to `train`, the rest to `test`. Both lists are sorted.
pub fn split_train_test(labels: &LabelMap, fraction: f64, seed: u64) -> Result<SplitIndex> {
    check_fraction(fraction)?;
    let mut pixels = labels.labeled();
    if pixels.is_empty() {
        return Err(Error::EmptySplit("label map has no labeled pixels".into()));
    }
    let take = (fraction * pixels.len() as f64).round() as usize;
    pixels.shuffle(&mut seed::rng(seed, "split"));
    let mut train = pixels[..take].to_vec();
    let mut test = pixels[take..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, test, seed })
}

/// Per-class variant of [`split_train_test`]: each class contributes
/// `round(fraction * class count)` training pixels.
pub fn split_train_test_stratified(
    labels: &LabelMap,
    fraction: f64,
    seed: u64,
) -> Result<SplitIndex> {
    check_fraction(fraction)?;
    if labels.labeled_count() == 0 {
        return Err(Error::EmptySplit("label map has no labeled pixels".into()));
    }
    let mut rng = seed::rng(seed, "split-stratified");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in labels.distinct_classes() {
        let mut pixels: Vec<_> = labels
            .labeled()
            .into_iter()
            .filter(|&(x, y)| labels.get(x, y) == class)
            .collect();
        let take = (fraction * pixels.len() as f64).round() as usize;
        pixels.shuffle(&mut rng);
        train.extend_from_slice(&pixels[..take]);
        test.extend_from_slice(&pixels[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndex { train, test, seed })
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("split fraction must be in (0, 1), got {fraction}"));
    }
    Ok(())
}

const CUBE_MAGIC: &[u8] = b"HSC1\n";

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    n: usize,
    m: usize,
    l: usize,
    dtype: String,
    order: String,
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cube(cube)?)?;
    Ok(())
}

pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    let header = CubeHeader {
        n: cube.n,
        m: cube.m,
        l: cube.l,
        dtype: "f64le".into(),
        order: "bsq-rowmajor".into(),
    };
    let mut out = Vec::with_capacity(64 + cube.values.len() * 8);
    out.extend_from_slice(CUBE_MAGIC);
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for v in &cube.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reads a cube exactly as stored; see [`HyperCube::normalized`] for the
/// max-normalization applied by the experiment pipeline.
pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    let (header, payload): (CubeHeader, &[u8]) = split_header(bytes, CUBE_MAGIC)?;
    if header.dtype != "f64le" {
        return format_err("dtype", format!("unsupported dtype {:?}", header.dtype));
    }
    if header.order != "bsq-rowmajor" {
        return format_err("order", format!("unsupported order {:?}", header.order));
    }
    if header.n == 0 || header.m == 0 || header.l == 0 {
        return invalid(format!(
            "header dimensions must be positive, got n={} m={} l={}",
            header.n, header.m, header.l
        ));
    }
    let values = decode_f64_payload(payload, header.n * header.m * header.l)?;
    HyperCube::new(header.n, header.m, header.l, values)
}

/// Splits `magic + json line + payload`, parsing the JSON header.
pub(crate) fn split_header<'a, H: for<'de> Deserialize<'de>>(
    bytes: &'a [u8],
    magic: &[u8],
) -> Result<(H, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return format_err("magic", "missing or wrong magic bytes");
    }
    let rest = &bytes[magic.len()..];
    let Some(eol) = rest.iter().position(|&b| b == b'\n') else {
        return format_err("header", "header line is not terminated");
    };
    let header = serde_json::from_slice(&rest[..eol]).or_else(|e| format_err("header", e.to_string()))?;
    Ok((header, &rest[eol + 1..]))
}

pub(crate) fn decode_f64_payload(payload: &[u8], count: usize) -> Result<Vec<f64>> {
    if payload.len() != count * 8 {
        return format_err(
            "payload",
            format!("expected {} bytes, found {}", count * 8, payload.len()),
        );
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return format_err("values", format!("non-finite value at index {pos}"));
    }
    Ok(values)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_labels(labels))?;
    Ok(())
}

/// Binary PGM: width is the column count `m`, height the row count `n`.
pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.m, labels.n).into_bytes();
    out.extend_from_slice(&labels.labels);
    out
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err("header", "truncated PGM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return format_err("magic", format!("expected P5, found {:?}", fields[0]));
    }
    let parse = |name: &str, s: &str| -> Result<usize> {
        s.parse::<usize>()
            .or_else(|_| format_err(name, format!("not an integer: {s:?}")))
    };
    let width = parse("width", &fields[1])?;
    let height = parse("height", &fields[2])?;
    let maxval = parse("maxval", &fields[3])?;
    if width == 0 || height == 0 {
        return invalid(format!("PGM dimensions must be positive, got {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return format_err("maxval", format!("only 8-bit PGM is supported, maxval={maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height {
        return format_err(
            "payload",
            format!("expected {} bytes, found {}", width * height, raster.len()),
        );
    }
    LabelMap::from_labels(height, width, raster.to_vec())
}

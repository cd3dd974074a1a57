//! Accuracy metrics, a linear SVM baseline, classification maps, and the
//! method-comparison harness.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ccnn::{argmax, build_patch_dataset, predict_measured, train_fixed, train_joint, ModelFile, PatchSample};
use crate::coded_aperture::{bluenoise_set, random_full_set, tile, CodedApertureSet};
use crate::datacube::{split_train_test, split_train_test_stratified, HyperCube, LabelMap, SplitIndex};
use crate::error::{invalid, Error, Result};
use crate::forward_model::{extract_patch, simulate_all, NoiseConfig, Patch};
use crate::net3d::{NetworkParams, TrainConfig};
use crate::seed;

/// Counts indexed `[truth - 1][prediction - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return invalid("confusion matrix must be square");
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u64>>::deserialize(d)?;
        Self::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Tallies 1-based `truth`/`pred` pairs into a `classes x classes` matrix.
pub fn confusion(truth: &[u8], pred: &[u8], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return invalid(format!("{} truth labels but {} predictions", truth.len(), pred.len()));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truth.iter().zip(pred) {
        for v in [t, p] {
            if v == 0 || usize::from(v) > classes {
                return invalid(format!("label {v} outside 1..={classes}"));
            }
        }
        cm.counts[(usize::from(t) - 1) * classes + usize::from(p) - 1] += 1;
    }
    Ok(cm)
}

/// Accuracy summary of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Recall per class; `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
    /// Wall-clock seconds per stage.
    #[serde(default)]
    pub timing: BTreeMap<String, f64>,
}

/// Overall accuracy, average per-class accuracy and Cohen's kappa.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Report> {
    let total = cm.total();
    if total == 0 {
        return invalid("confusion matrix is empty");
    }
    let t = total as f64;
    let c = cm.classes;
    let diag: u64 = (0..c).map(|i| cm.get(i, i)).sum();
    let oa = diag as f64 / t;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|i| {
            let row = cm.row_sum(i);
            (row > 0).then(|| cm.get(i, i) as f64 / row as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..c).map(|j| cm.row_sum(j) as f64 * cm.col_sum(j) as f64).sum::<f64>() / (t * t);
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(Report {
        per_class,
        oa,
        aa,
        kappa,
        confusion: cm.clone(),
        timing: BTreeMap::new(),
    })
}

/// Measurements per voxel column: `K / L`.
pub fn compression_ratio(k: usize, l: usize) -> f64 {
    k as f64 / l as f64
}

/// Subgradient-descent settings for [`svm_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Weight of the `lambda/2 * |w|^2` penalty.
    pub lambda: f64,
    pub epochs: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 500,
            eta: 0.5,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One weight vector per class, class `i + 1` at index `i`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl SvmModel {
    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn decision(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return invalid(format!("feature length {} differs from model dimension {}", x.len(), self.mean.len()));
        }
        let z = self.standardize(x);
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect())
    }
}

/// Trains one hinge-loss classifier per class by full-batch subgradient
/// descent on `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`.
pub fn svm_train(features: &[Vec<f64>], labels: &[u8], cfg: &SvmConfig) -> Result<SvmModel> {
    if features.len() != labels.len() {
        return invalid(format!("{} feature rows but {} labels", features.len(), labels.len()));
    }
    let Some(dim) = features.first().map(Vec::len) else {
        return Err(Error::EmptySplit("no SVM training samples".into()));
    };
    if features.iter().any(|f| f.len() != dim) {
        return invalid("feature rows have unequal lengths");
    }
    if !(cfg.lambda >= 0.0 && cfg.eta > 0.0 && cfg.epochs > 0) {
        return invalid("SVM needs lambda >= 0, eta > 0 and at least one epoch");
    }
    if labels.contains(&0) {
        return invalid("label 0 marks unlabeled pixels and cannot be trained on");
    }
    let distinct: std::collections::BTreeSet<u8> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return invalid("SVM training needs at least two classes");
    }
    let classes = usize::from(*distinct.iter().next_back().expect("nonempty"));

    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
    }
    let mut scale = vec![0.0; dim];
    for f in features {
        scale.iter_mut().zip(f).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let mut model = SvmModel {
        mean,
        scale,
        weights: Vec::with_capacity(classes),
        biases: Vec::with_capacity(classes),
    };
    let z: Vec<Vec<f64>> = features.iter().map(|f| model.standardize(f)).collect();

    for class in 1..=classes {
        let mut rng = seed::rng(cfg.seed, &format!("svm-class-{class}"));
        let mut w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let mut b = 0.0;
        let y: Vec<f64> = labels.iter().map(|&l| if usize::from(l) == class { 1.0 } else { -1.0 }).collect();
        let mut gw = vec![0.0; dim];
        for t in 0..cfg.epochs {
            gw.iter_mut().zip(&w).for_each(|(g, w)| *g = cfg.lambda * w);
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(&y) {
                let margin = yi * (w.iter().zip(zi).map(|(a, b)| a * b).sum::<f64>() + b);
                if margin < 1.0 {
                    gw.iter_mut().zip(zi).for_each(|(g, x)| *g -= yi * x / n);
                    gb -= yi / n;
                }
            }
            let step = cfg.eta / ((1 + t) as f64).sqrt();
            w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            b -= step * gb;
        }
        model.weights.push(w);
        model.biases.push(b);
    }
    Ok(model)
}

/// 1-based class with the largest decision value.
pub fn svm_predict(model: &SvmModel, features: &[f64]) -> Result<u8> {
    Ok((argmax(&model.decision(features)?) + 1) as u8)
}

/// Colours for classes 1..=16; larger labels wrap around.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// Binary PPM (P6) image of a label map; unlabeled pixels are black.
pub fn render_map(map: &LabelMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.m(), map.n()).into_bytes();
    for &l in map.labels() {
        let rgb = if l == 0 { [0, 0, 0] } else { PALETTE[(usize::from(l) - 1) % PALETTE.len()] };
        out.extend_from_slice(&rgb);
    }
    out
}

pub fn save_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_map(map))?;
    Ok(())
}

/// A method of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ccnn,
    RandCompress3dcnn,
    BluenoiseCompress3dcnn,
    RandCompressSvm,
    BluenoiseCompressSvm,
    Original3dcnn,
    OriginalSvm,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ccnn,
        Method::RandCompress3dcnn,
        Method::BluenoiseCompress3dcnn,
        Method::RandCompressSvm,
        Method::BluenoiseCompressSvm,
        Method::Original3dcnn,
        Method::OriginalSvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ccnn => "ccnn",
            Method::RandCompress3dcnn => "rand-compress-3dcnn",
            Method::BluenoiseCompress3dcnn => "bluenoise-compress-3dcnn",
            Method::RandCompressSvm => "rand-compress-svm",
            Method::BluenoiseCompressSvm => "bluenoise-compress-svm",
            Method::Original3dcnn => "original-3dcnn",
            Method::OriginalSvm => "original-svm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by every method of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub methods: Vec<String>,
    /// Snapshots.
    pub k: usize,
    /// Basic block side of the learned aperture.
    pub b: usize,
    /// Training fraction of the labeled pixels.
    pub fraction: f64,
    pub stratified: bool,
    /// Open fraction of the random and blue-noise masks.
    pub transmittance: f64,
    pub noise: NoiseConfig,
    /// Patch size comes from `train.patch_p`.
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub seed: u64,
    /// Independent repetitions averaged per method.
    pub runs: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            k: 3,
            b: 4,
            fraction: 0.3,
            stratified: false,
            transmittance: 0.5,
            noise: NoiseConfig::None,
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            seed: 0,
            runs: 1,
        }
    }
}

impl CompareConfig {
    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods listed".into()));
        }
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.parsed_methods()?;
        self.train.validate()?;
        if self.k < 2 {
            return Err(Error::Config(format!("snapshots must be at least 2, got {}", self.k)));
        }
        if self.b == 0 {
            return Err(Error::Config("block side must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!("fraction must lie in (0, 1), got {}", self.fraction)));
        }
        if !(self.transmittance > 0.0 && self.transmittance < 1.0) {
            return Err(Error::Config(format!("transmittance must lie in (0, 1), got {}", self.transmittance)));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean metrics of one method over all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub seconds: f64,
    pub runs: Vec<Report>,
}

/// Rows in config order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<MethodRow>,
}

impl CompareTable {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,oa,aa,kappa,seconds` followed by one line per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,oa,aa,kappa,seconds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{:.3}\n", r.method, r.oa, r.aa, r.kappa, r.seconds));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// The split a comparison run uses.
pub fn run_split(labels: &LabelMap, cfg: &CompareConfig, run: usize) -> Result<SplitIndex> {
    let s = seed::derive_seed(run_seed(cfg, run), "split");
    if cfg.stratified {
        split_train_test_stratified(labels, cfg.fraction, s)
    } else {
        split_train_test(labels, cfg.fraction, s)
    }
}

fn run_seed(cfg: &CompareConfig, run: usize) -> u64 {
    seed::derive_seed(cfg.seed, &format!("run-{run}"))
}

/// Fixed masks used by a compressive baseline.
pub fn baseline_apertures(method: Method, cube: &HyperCube, cfg: &CompareConfig, run: usize) -> Result<Option<CodedApertureSet>> {
    let s = run_seed(cfg, run);
    let (n, m, l) = (cube.n(), cube.m(), cube.bands());
    Ok(match method {
        Method::RandCompress3dcnn | Method::RandCompressSvm => {
            Some(random_full_set(cfg.k, n, m, l, cfg.transmittance, seed::derive_seed(s, "random-aperture"))?)
        }
        Method::BluenoiseCompress3dcnn | Method::BluenoiseCompressSvm => {
            Some(bluenoise_set(cfg.k, n, m, l, cfg.transmittance, seed::derive_seed(s, "bluenoise-aperture"))?)
        }
        _ => None,
    })
}

/// Expands periodic blocks into full masks for an `n x m x l` cube.
pub fn tiled_set(set: &CodedApertureSet, n: usize, m: usize, l: usize) -> Result<CodedApertureSet> {
    match set.blocks() {
        Some(blocks) => CodedApertureSet::full(blocks.iter().map(|b| tile(b, n, m + l - 1)).collect::<Result<_>>()?),
        None => Ok(set.clone()),
    }
}

/// A trained classifier together with the masks that code its input.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Cnn {
        net: NetworkParams,
        apertures: Option<CodedApertureSet>,
        loss_trace: Vec<f64>,
    },
    Svm {
        model: SvmModel,
        apertures: Option<CodedApertureSet>,
    },
}

impl Fitted {
    pub fn apertures(&self) -> Option<&CodedApertureSet> {
        match self {
            Fitted::Cnn { apertures, .. } | Fitted::Svm { apertures, .. } => apertures.as_ref(),
        }
    }
}

/// Input patches for `samples`: coded measurements if `apertures` is set,
/// scene patches otherwise.
pub fn input_patches(
    cube: &HyperCube,
    apertures: Option<&CodedApertureSet>,
    samples: &[PatchSample],
    noise: NoiseConfig,
) -> Result<Vec<Patch>> {
    let Some(set) = apertures else {
        return Ok(samples.iter().map(|s| s.scene.clone()).collect());
    };
    let meas = simulate_all(cube, &tiled_set(set, cube.n(), cube.m(), cube.bands())?, noise)?;
    samples
        .iter()
        .map(|s| extract_patch(&meas, s.center.0, s.center.1, s.scene.side()))
        .collect()
}

fn method_seeds(method: Method, cfg: &CompareConfig, run: usize) -> (TrainConfig, SvmConfig) {
    let s = run_seed(cfg, run);
    let train = TrainConfig {
        seed: seed::derive_seed(s, &format!("train-{method}")),
        ..cfg.train.clone()
    };
    let svm = SvmConfig {
        seed: seed::derive_seed(s, &format!("svm-{method}")),
        ..cfg.svm.clone()
    };
    (train, svm)
}

/// Trains `method` on `train` for comparison run `run`.
pub fn fit_method(
    method: Method,
    cube: &HyperCube,
    train: &[PatchSample],
    classes: usize,
    cfg: &CompareConfig,
    run: usize,
) -> Result<Fitted> {
    let (train_cfg, svm_cfg) = method_seeds(method, cfg, run);
    if method == Method::Ccnn {
        let out = train_joint(train, &train_cfg, cfg.k, cfg.b, classes)?;
        return Ok(Fitted::Cnn {
            net: out.params.net,
            apertures: Some(out.params.apertures),
            loss_trace: out.loss_trace,
        });
    }
    let apertures = baseline_apertures(method, cube, cfg, run)?;
    let inputs = input_patches(cube, apertures.as_ref(), train, cfg.noise)?;
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    match method {
        Method::RandCompressSvm | Method::BluenoiseCompressSvm | Method::OriginalSvm => {
            let x: Vec<Vec<f64>> = inputs.iter().map(|p| p.values().to_vec()).collect();
            Ok(Fitted::Svm {
                model: svm_train(&x, &labels, &svm_cfg)?,
                apertures,
            })
        }
        _ => {
            let pairs: Vec<(Patch, u8)> = inputs.into_iter().zip(labels).collect();
            let out = train_fixed(&pairs, &train_cfg, classes)?;
            Ok(Fitted::Cnn {
                net: out.net,
                apertures,
                loss_trace: out.loss_trace,
            })
        }
    }
}

/// 1-based predictions for `samples`.
pub fn predict_method(fitted: &Fitted, cube: &HyperCube, samples: &[PatchSample], noise: NoiseConfig) -> Result<Vec<u8>> {
    let inputs = input_patches(cube, fitted.apertures(), samples, noise)?;
    match fitted {
        Fitted::Cnn { net, .. } => inputs.iter().map(|p| predict_measured(net, p)).collect(),
        Fitted::Svm { model, .. } => inputs.iter().map(|p| svm_predict(model, p.values())).collect(),
    }
}

/// Test predictions of one method in one run, with stage timings.
pub fn run_method(
    method: Method,
    cube: &HyperCube,
    train: &[PatchSample],
    test: &[PatchSample],
    classes: usize,
    cfg: &CompareConfig,
    run: usize,
) -> Result<(Vec<u8>, BTreeMap<String, f64>)> {
    let mut timing = BTreeMap::new();
    let clock = Instant::now();
    let fitted = fit_method(method, cube, train, classes, cfg, run)?;
    let trained = clock.elapsed().as_secs_f64();
    timing.insert("train".to_string(), trained);
    let pred = predict_method(&fitted, cube, test, cfg.noise)?;
    let total = clock.elapsed().as_secs_f64();
    timing.insert("predict".to_string(), total - trained);
    timing.insert("total".to_string(), total);
    Ok((pred, timing))
}

/// What `config` of a `.ccnn.json` file holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub method: Method,
    pub classes: usize,
    /// Settings the model was trained with; the split is that of run 0.
    pub settings: CompareConfig,
}

impl ModelConfig {
    pub fn to_model_file(&self, fitted: &Fitted) -> Result<ModelFile> {
        match fitted {
            Fitted::Cnn {
                net,
                apertures,
                loss_trace,
            } => Ok(ModelFile {
                net: net.clone(),
                apertures: apertures.clone(),
                config: serde_json::to_value(self)?,
                loss_trace: loss_trace.clone(),
            }),
            Fitted::Svm { .. } => Err(Error::Config("SVM baselines are only run through compare".into())),
        }
    }

    pub fn from_model_file(model: &ModelFile) -> Result<(Self, Fitted)> {
        let cfg: Self = serde_json::from_value(model.config.clone()).map_err(|e| Error::Format {
            field: "config".into(),
            message: e.to_string(),
        })?;
        let fitted = Fitted::Cnn {
            net: model.net.clone(),
            apertures: model.apertures.clone(),
            loss_trace: model.loss_trace.clone(),
        };
        Ok((cfg, fitted))
    }
}

/// Runs every configured method on a shared split per run and averages.
pub fn compare(cube: &HyperCube, labels: &LabelMap, cfg: &CompareConfig) -> Result<CompareTable> {
    cfg.validate()?;
    labels.check_matches(cube)?;
    let methods = cfg.parsed_methods()?;
    let classes = labels.classes();
    let mut rows: Vec<MethodRow> = methods
        .iter()
        .map(|&method| MethodRow {
            method,
            oa: 0.0,
            aa: 0.0,
            kappa: 0.0,
            seconds: 0.0,
            runs: Vec::new(),
        })
        .collect();
    for run in 0..cfg.runs {
        let split = run_split(labels, cfg, run)?;
        let (train, test) = build_patch_dataset(cube, labels, &split, cfg.train.patch_p)?;
        if test.is_empty() {
            return Err(Error::EmptySplit("test partition is empty".into()));
        }
        let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
        for row in &mut rows {
            let (pred, timing) = run_method(row.method, cube, &train, &test, classes, cfg, run)?;
            let mut report = metrics(&confusion(&truth, &pred, classes)?)?;
            report.timing = timing;
            log::info!("run {run} {}: oa {:.4}", row.method, report.oa);
            row.runs.push(report);
        }
    }
    let r = cfg.runs as f64;
    for row in &mut rows {
        row.oa = row.runs.iter().map(|x| x.oa).sum::<f64>() / r;
        row.aa = row.runs.iter().map(|x| x.aa).sum::<f64>() / r;
        row.kappa = row.runs.iter().map(|x| x.kappa).sum::<f64>() / r;
        row.seconds = row.runs.iter().map(|x| x.timing["total"]).sum::<f64>() / r;
    }
    Ok(CompareTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[1, 2, 2], &[1, 1, 2], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(cm.total(), 3);
        assert!(confusion(&[3], &[1], 2).is_err());
        assert!(confusion(&[1], &[0], 2).is_err());
        assert!(confusion(&[1], &[], 2).is_err());
    }

    #[test]
    fn hand_worked_metrics() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
        let r = metrics(&cm).unwrap();
        assert!((r.oa - 0.85).abs() < 1e-12);
        assert!((r.aa - 0.85).abs() < 1e-12);
        assert!((r.kappa - 0.70).abs() < 1e-12);
    }

    #[test]
    fn identity_and_empty() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]).unwrap();
        let r = metrics(&cm).unwrap();
        assert_eq!((r.oa, r.aa, r.kappa), (1.0, 1.0, 1.0));
        assert_eq!(r.per_class[2], None);
        assert!(metrics(&ConfusionMatrix::zeros(3)).is_err());
        let single = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!(metrics(&single).unwrap().kappa, 1.0);
    }

    #[test]
    fn compression_ratios() {
        assert!((compression_ratio(5, 103) - 0.048_543_689_320_388_35).abs() < 1e-15);
        assert_eq!(compression_ratio(8, 8), 1.0);
    }

    #[test]
    fn unlabeled_map_is_black() {
        let map = LabelMap::new(2, 3, 4, vec![0; 6]).unwrap();
        let img = render_map(&map);
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert!(img[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(img.len(), header.len() + 18);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("pca-svm".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn svm_rejects_single_class() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(svm_train(&x, &[1, 1], &SvmConfig::default()).is_err());
    }

    #[test]
    fn svm_separates_shifted_points() {
        let x = vec![vec![-2.0, 0.1], vec![-1.5, -0.3], vec![1.7, 0.2], vec![2.2, -0.1]];
        let y = [1, 1, 2, 2];
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        for (f, &l) in x.iter().zip(&y) {
            assert_eq!(svm_predict(&model, f).unwrap(), l);
        }
    }
}

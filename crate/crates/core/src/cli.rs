//! The `ccnn` command line: scene synthesis, aperture design, simulation,
//! training, evaluation and method comparison.
//!
//! Every command writes a `run.json` next to its main output with the
//! resolved configuration, the seed and SHA-256 checksums of the files it
//! wrote. Exit status is 0 on success, 2 when arguments or configuration are
//! invalid, and 1 when the run itself fails.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ccnn::{build_patch_dataset, ModelFile};
use crate::coded_aperture::{
    bluenoise_set, random_full_set, random_periodic_set, save_apertures, load_apertures, uniform_periodic_set,
    CodedApertureSet,
};
use crate::datacube::{generate_synthetic_scene, load_cube, load_labels, save_cube, save_labels, HyperCube, LabelMap};
use crate::error::{Error, Result};
use crate::evalbench::{
    compare, confusion, fit_method, metrics, predict_method, run_split, save_map, tiled_set, CompareConfig, Method,
    ModelConfig, SvmConfig,
};
use crate::forward_model::{build_system_matrix, save_measurements, simulate_all, NoiseConfig};
use crate::net3d::{BlockInit, TrainConfig};

/// Parameters of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub classes: usize,
    pub seed: u64,
}

/// Declarative experiment; a JSON file of this shape can be passed with
/// `--config`, and flags override its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    /// Snapshots.
    pub k: usize,
    /// Basic block side.
    pub b: usize,
    /// Patch side.
    pub p: usize,
    pub fraction: f64,
    pub stratified: bool,
    pub transmittance: f64,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub methods: Vec<String>,
    pub runs: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cmp = CompareConfig::default();
        Self {
            scene: None,
            labels: None,
            synth: None,
            k: 5,
            b: 4,
            p: 7,
            fraction: 0.3,
            stratified: false,
            transmittance: 0.5,
            noise: NoiseConfig::None,
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            methods: cmp.methods,
            runs: 1,
            out_dir: PathBuf::from("."),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p % 2 == 0 {
            return Err(Error::Config(format!("--p must be odd, got {}", self.p)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("--k must be at least 2, got {}", self.k)));
        }
        if self.b == 0 {
            return Err(Error::Config("--b must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!("--fraction must lie in (0, 1), got {}", self.fraction)));
        }
        self.compare_config().validate()
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            methods: self.methods.clone(),
            k: self.k,
            b: self.b,
            fraction: self.fraction,
            stratified: self.stratified,
            transmittance: self.transmittance,
            noise: self.noise,
            train: TrainConfig {
                patch_p: self.p,
                ..self.train.clone()
            },
            svm: self.svm.clone(),
            seed: self.seed,
            runs: self.runs,
        }
    }

    /// Max-normalized cube and labels from files or from `synth`.
    pub fn load_scene(&self) -> Result<(HyperCube, LabelMap)> {
        match (&self.scene, &self.labels, &self.synth) {
            (Some(scene), Some(labels), _) => {
                let cube = load_input(scene, "--scene", load_cube)?;
                let labels = load_input(labels, "--labels", load_labels)?;
                labels.check_matches(&cube)?;
                Ok((cube.normalized(), labels))
            }
            (None, None, Some(s)) => {
                let (cube, labels) = generate_synthetic_scene(s.n, s.m, s.l, s.classes, s.seed)?;
                Ok((cube.normalized(), labels))
            }
            _ => Err(Error::Config("give both --scene and --labels, or a `synth` block in --config".into())),
        }
    }
}

fn load_input<'a, T>(path: &'a Path, flag: &str, load: impl FnOnce(&'a Path) -> Result<T>) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!("{flag}: file {} does not exist", path.display())));
    }
    load(path)
}

#[derive(Parser, Debug)]
#[command(name = "ccnn", version, about = "Coded-aperture compressive spectral classification")]
struct Cli {
    /// Worker threads for batch gradients.
    #[arg(long, global = true, env = "CCNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled scene.
    Synth(SynthArgs),
    /// Design coded apertures.
    Aperture(ApertureArgs),
    /// Simulate compressive measurements of a scene.
    Simulate(SimulateArgs),
    /// Train one method and save the model.
    Train(TrainArgs),
    /// Evaluate a saved model on its test split.
    Eval(EvalArgs),
    /// Run several methods on a shared split and tabulate metrics.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    l: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ApertureKind {
    /// Full Bernoulli masks.
    Random,
    /// Full void-and-cluster masks.
    Bluenoise,
    /// Periodic Bernoulli blocks.
    RandomBlocks,
    /// Periodic blocks uniform in [0, 1].
    UniformBlocks,
}

#[derive(Args, Debug)]
struct ApertureArgs {
    #[arg(long, value_enum)]
    kind: Option<ApertureKind>,
    /// Export the blocks of a trained model instead of designing new ones.
    #[arg(long, conflicts_with = "kind")]
    from_model: Option<PathBuf>,
    /// Write the full tiled masks rather than one period.
    #[arg(long)]
    tiled: bool,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, default_value_t = 4)]
    b: usize,
    #[arg(long, default_value_t = 0.5)]
    transmittance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    apertures: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add Gaussian detector noise at this SNR.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Also write the system matrix as `row col value` triplets.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

/// Flags that override an [`ExperimentConfig`].
#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    project_every_step: bool,
    #[arg(long)]
    bernoulli_init: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let bytes = load_input(path, "--config", |p| Ok(std::fs::read(p)?))?;
                serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("--config: {e}")))?
            }
            None => ExperimentConfig::default(),
        };
        if self.scene.is_some() || self.labels.is_some() {
            cfg.scene = self.scene.clone().or(cfg.scene);
            cfg.labels = self.labels.clone().or(cfg.labels);
            cfg.synth = None;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(k => k, b => b, p => p, fraction => fraction, epochs => train.epochs, eta => train.eta,
             batch => train.batch, runs => runs, seed => seed);
        if let Some(c) = self.clip {
            cfg.train.clip = Some(c);
        }
        if self.stratified {
            cfg.stratified = true;
        }
        if self.project_every_step {
            cfg.train.project_every_step = true;
        }
        if self.bernoulli_init {
            cfg.train.block_init = BlockInit::Bernoulli;
        }
        if let Some(snr_db) = self.snr_db {
            cfg.noise = NoiseConfig::Gaussian {
                snr_db,
                seed: crate::seed::derive_seed(cfg.seed, "detector-noise"),
            };
        }
        cfg.train.patch_p = cfg.p;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// One of the CNN methods of `compare`.
    #[arg(long, default_value = "ccnn")]
    method: String,
    /// Fixed masks to use instead of the method's own (CNN baselines only).
    #[arg(long)]
    apertures: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Classification map of every labeled pixel (PPM).
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Provenance of one command invocation.
#[derive(Debug, Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: u64,
    artifacts: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let digest = Sha256::digest(std::fs::read(path)?);
    Ok(hex::encode(digest))
}

fn write_run_record<C: Serialize>(command: &str, config: &C, seed: u64, artifacts: &[&Path]) -> Result<()> {
    let mut sums = BTreeMap::new();
    for a in artifacts {
        sums.insert(a.display().to_string(), sha256_file(a)?);
    }
    let record = RunRecord {
        command,
        config,
        seed,
        artifacts: sums,
    };
    let dir = artifacts
        .first()
        .and_then(|p| p.parent())
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::write(dir.join("run.json"), serde_json::to_vec_pretty(&record)?)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let (cube, labels) = generate_synthetic_scene(a.n, a.m, a.l, a.classes, a.seed)?;
    ensure_parent(&a.out)?;
    ensure_parent(&a.labels)?;
    save_cube(&cube, &a.out)?;
    save_labels(&labels, &a.labels)?;
    let spec = SynthSpec {
        n: a.n,
        m: a.m,
        l: a.l,
        classes: a.classes,
        seed: a.seed,
    };
    write_run_record("synth", &spec, a.seed, &[&a.out, &a.labels])
}

fn cmd_aperture(a: &ApertureArgs) -> Result<()> {
    let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| Error::Config(format!("{flag} is required for full masks")));
    let set = match (a.kind, &a.from_model) {
        (_, Some(model)) => {
            let model = load_input(model, "--from-model", ModelFile::load)?;
            model
                .apertures
                .ok_or_else(|| Error::Config("--from-model: model has no apertures".into()))?
        }
        (Some(ApertureKind::Random), None) => {
            random_full_set(a.k, need(a.n, "--n")?, need(a.m, "--m")?, need(a.l, "--l")?, a.transmittance, a.seed)?
        }
        (Some(ApertureKind::Bluenoise), None) => {
            bluenoise_set(a.k, need(a.n, "--n")?, need(a.m, "--m")?, need(a.l, "--l")?, a.transmittance, a.seed)?
        }
        (Some(ApertureKind::RandomBlocks), None) => random_periodic_set(a.k, a.b, a.transmittance, a.seed)?,
        (Some(ApertureKind::UniformBlocks), None) => uniform_periodic_set(a.k, a.b, a.seed)?,
        (None, None) => return Err(Error::Config("give --kind or --from-model".into())),
    };
    let set = if a.tiled {
        tiled_set(&set, need(a.n, "--n")?, need(a.m, "--m")?, need(a.l, "--l")?)?
    } else {
        set
    };
    ensure_parent(&a.out)?;
    save_apertures(&set, &a.out)?;
    let config = serde_json::json!({
        "kind": a.kind,
        "from_model": a.from_model,
        "tiled": a.tiled,
        "k": a.k, "n": a.n, "m": a.m, "l": a.l, "b": a.b,
        "transmittance": a.transmittance,
    });
    write_run_record("aperture", &config, a.seed, &[&a.out])
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cube = load_input(&a.scene, "--scene", load_cube)?;
    let set = load_input(&a.apertures, "--apertures", load_apertures)?;
    let set = tiled_set(&set, cube.n(), cube.m(), cube.bands())?;
    let noise = match a.snr_db {
        Some(snr_db) => NoiseConfig::Gaussian {
            snr_db,
            seed: a.noise_seed,
        },
        None => NoiseConfig::None,
    };
    let meas = simulate_all(&cube, &set, noise)?;
    ensure_parent(&a.out)?;
    save_measurements(&meas, &a.out)?;
    let mut artifacts = vec![a.out.as_path()];
    if let Some(path) = &a.matrix {
        let h = build_system_matrix(&set, cube.n(), cube.m(), cube.bands())?;
        ensure_parent(path)?;
        h.write_triplets(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        artifacts.push(path);
    }
    let config = serde_json::json!({
        "scene": a.scene,
        "apertures": a.apertures,
        "noise": noise,
        "matrix": a.matrix,
    });
    write_run_record("simulate", &config, a.noise_seed, &artifacts)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    cfg.validate()?;
    let method: Method = a.method.parse()?;
    if matches!(method, Method::RandCompressSvm | Method::BluenoiseCompressSvm | Method::OriginalSvm) {
        return Err(Error::Config(format!("--method {method}: SVM baselines are only run through compare")));
    }
    let (cube, labels) = cfg.load_scene()?;
    let cmp = cfg.compare_config();
    let split = run_split(&labels, &cmp, 0)?;
    let (train, _) = build_patch_dataset(&cube, &labels, &split, cfg.p)?;
    let fitted = match &a.apertures {
        Some(path) => {
            if method == Method::Ccnn || method == Method::Original3dcnn {
                return Err(Error::Config(format!("--apertures cannot be combined with --method {method}")));
            }
            let set = load_input(path, "--apertures", load_apertures)?;
            fit_with_apertures(&cube, &train, labels.classes(), &cmp, set)?
        }
        None => fit_method(method, &cube, &train, labels.classes(), &cmp, 0)?,
    };
    let model_cfg = ModelConfig {
        method,
        classes: labels.classes(),
        settings: cmp,
    };
    ensure_parent(&a.out)?;
    model_cfg.to_model_file(&fitted)?.save(&a.out)?;
    write_run_record("train", &cfg, cfg.seed, &[&a.out])
}

fn fit_with_apertures(
    cube: &HyperCube,
    train: &[crate::ccnn::PatchSample],
    classes: usize,
    cmp: &CompareConfig,
    set: CodedApertureSet,
) -> Result<crate::evalbench::Fitted> {
    let set = tiled_set(&set, cube.n(), cube.m(), cube.bands())?;
    let inputs = crate::evalbench::input_patches(cube, Some(&set), train, cmp.noise)?;
    let pairs: Vec<_> = inputs.into_iter().zip(train.iter().map(|s| s.label)).collect();
    let train_cfg = TrainConfig {
        seed: crate::seed::derive_seed(cmp.seed, "train-fixed"),
        ..cmp.train.clone()
    };
    let out = crate::ccnn::train_fixed(&pairs, &train_cfg, classes)?;
    Ok(crate::evalbench::Fitted::Cnn {
        net: out.net,
        apertures: Some(set),
        loss_trace: out.loss_trace,
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_input(&a.model, "--model", ModelFile::load)?;
    let (model_cfg, fitted) = ModelConfig::from_model_file(&model)?;
    let scene = ExperimentConfig {
        scene: a.scene.clone(),
        labels: a.labels.clone(),
        ..ExperimentConfig::default()
    };
    let (cube, labels) = scene.load_scene()?;
    if labels.classes() != model_cfg.classes {
        return Err(Error::Config(format!(
            "--labels has {} classes but the model was trained for {}",
            labels.classes(),
            model_cfg.classes
        )));
    }
    let cmp = &model_cfg.settings;
    let split = run_split(&labels, cmp, 0)?;
    let (train, test) = build_patch_dataset(&cube, &labels, &split, cmp.train.patch_p)?;
    if test.is_empty() {
        return Err(Error::EmptySplit("test partition is empty".into()));
    }
    let clock = std::time::Instant::now();
    let pred = predict_method(&fitted, &cube, &test, cmp.noise)?;
    let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
    let mut report = metrics(&confusion(&truth, &pred, model_cfg.classes)?)?;
    report.timing.insert("predict".into(), clock.elapsed().as_secs_f64());
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, serde_json::to_vec_pretty(&report)?)?;
    let mut artifacts = vec![a.out.as_path()];
    if let Some(path) = &a.map {
        let mut values = vec![0u8; labels.n() * labels.m()];
        let train_pred = predict_method(&fitted, &cube, &train, cmp.noise)?;
        for (s, p) in train.iter().zip(train_pred).chain(test.iter().zip(pred)) {
            values[s.center.0 * labels.m() + s.center.1] = p;
        }
        ensure_parent(path)?;
        save_map(&LabelMap::new(labels.n(), labels.m(), labels.classes(), values)?, path)?;
        artifacts.push(path);
    }
    let config = serde_json::json!({ "model": a.model, "scene": a.scene, "labels": a.labels });
    write_run_record("eval", &config, cmp.seed, &artifacts)
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let mut cfg = a.exp.resolve()?;
    if let Some(m) = &a.methods {
        cfg.methods = m.clone();
    }
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    let (cube, labels) = cfg.load_scene()?;
    let table = compare(&cube, &labels, &cfg.compare_config())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let csv = cfg.out_dir.join("compare.csv");
    let json = cfg.out_dir.join("compare.json");
    std::fs::write(&csv, table.to_csv())?;
    std::fs::write(&json, serde_json::to_vec_pretty(&table)?)?;
    print!("{}", table.to_csv());
    write_run_record("compare", &cfg, cfg.seed, &[&csv, &json])
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::EmptySplit(_) | Error::Format { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Aperture(a) => cmd_aperture(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

//! The 3D coded convolutional network: the coded aperture acts as a
//! pixel-wise linear layer in front of the 3D CNN, and both are trained
//! end to end by plain gradient descent.
//!
//! Training data are scene patches (`P x P x L`) rather than measurements,
//! because the measurements change whenever the aperture blocks move.
//! Blocks are clamped to `[0, 1]` once, after the last epoch.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coded_aperture::{clamp_blocks, random_periodic_set, uniform_periodic_set, CodedApertureSet};
use crate::datacube::{HyperCube, LabelMap, SplitIndex};
use crate::error::{invalid, Error, Result};
use crate::forward_model::{extract_scene_patch, patch_forward, Patch};
use crate::net3d::{
    backward, build_network_with, forward, loss, loss_and_gradients, loss_grad, loss_only, sgd_step, softmax,
    BlockInit, GradCheckReport, Gradients, NetworkParams, Tensor4, Topology, TrainConfig,
};
use crate::seed;

/// A labeled scene patch centred on `center = (x, y)`; `label` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub scene: Patch,
    pub center: (usize, usize),
    pub label: u8,
}

/// Network weights together with the periodic aperture blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub net: NetworkParams,
    pub apertures: CodedApertureSet,
}

/// Per-snapshot gradients over the `B x B` block entries.
pub type BlockGrad = Vec<Vec<f64>>;

pub fn patch_to_tensor(patch: &Patch) -> Tensor4 {
    let p = patch.side();
    Tensor4::new([patch.depth(), p, p, 1], patch.values().to_vec()).expect("patch values are finite")
}

/// Codes a training sample's scene patch into its measurement patch.
pub fn aperture_layer_forward(sample: &PatchSample, blocks: &CodedApertureSet) -> Result<Patch> {
    if blocks.block_side().is_none() {
        return invalid("the aperture layer needs periodic blocks");
    }
    patch_forward(&sample.scene, blocks, sample.center.0, sample.center.1)
}

/// `dL/dC^k[a][b]`: the sum of `F[r][c][band] * dY[k][r][c]` over every
/// `(r, c, band)` that reads block entry `(a, b)`.
pub fn aperture_layer_backward(sample: &PatchSample, b: usize, d_y: &Patch) -> Result<BlockGrad> {
    let mut grad = vec![vec![0.0; b * b]; d_y.depth()];
    accumulate_aperture_grad(sample, b, d_y, &mut grad)?;
    Ok(grad)
}

/// Adds this sample's block gradient into `grad`.
pub fn accumulate_aperture_grad(sample: &PatchSample, b: usize, d_y: &Patch, grad: &mut BlockGrad) -> Result<()> {
    let scene = &sample.scene;
    let p = scene.side();
    if d_y.side() != p {
        return invalid(format!("gradient patch side {} differs from scene patch side {p}", d_y.side()));
    }
    if grad.len() != d_y.depth() || grad.iter().any(|g| g.len() != b * b) {
        return invalid("block gradient buffer has the wrong shape");
    }
    if b == 0 {
        return invalid("block side must be positive");
    }
    let q = (p / 2) as i64;
    let bi = b as i64;
    let (x0, y0) = (sample.center.0 as i64, sample.center.1 as i64);
    for (k, gk) in grad.iter_mut().enumerate() {
        for r in 0..p {
            let row = (x0 + r as i64 - q).rem_euclid(bi) as usize;
            for c in 0..p {
                let dy = d_y.get(k, r, c);
                if dy == 0.0 {
                    continue;
                }
                for band in 0..scene.depth() {
                    let col = (y0 + c as i64 - q + band as i64).rem_euclid(bi) as usize;
                    gk[row * b + col] += scene.get(band, r, c) * dy;
                }
            }
        }
    }
    Ok(())
}

/// One sample per labeled pixel of each partition, ordered row-major.
pub fn build_patch_dataset(
    cube: &HyperCube,
    labels: &LabelMap,
    split: &SplitIndex,
    p: usize,
) -> Result<(Vec<PatchSample>, Vec<PatchSample>)> {
    labels.check_matches(cube)?;
    if p % 2 == 0 {
        return invalid(format!("patch size must be odd, got {p}"));
    }
    if split.train.is_empty() {
        return Err(Error::EmptySplit("training partition is empty".into()));
    }
    let build = |coords: &[(usize, usize)]| -> Result<Vec<PatchSample>> {
        let mut sorted = coords.to_vec();
        sorted.sort_unstable();
        sorted
            .into_iter()
            .map(|(x, y)| {
                let label = labels.get(x, y);
                if label == 0 {
                    return invalid(format!("pixel ({x}, {y}) in the split is unlabeled"));
                }
                Ok(PatchSample {
                    scene: extract_scene_patch(cube, x, y, p)?,
                    center: (x, y),
                    label,
                })
            })
            .collect()
    };
    Ok((build(&split.train)?, build(&split.test)?))
}

/// Result of joint training.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub params: JointParams,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Number of times the blocks were clamped.
    pub clamp_calls: usize,
}

/// Result of fixed-aperture training.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedOutcome {
    pub net: NetworkParams,
    pub loss_trace: Vec<f64>,
}

fn topology_for(cfg: &TrainConfig, k: usize, classes: usize) -> Topology {
    Topology {
        k,
        p: cfg.patch_p,
        classes,
        activation: cfg.activation,
        padding: cfg.padding,
    }
}

fn class_index(label: u8, classes: usize) -> Result<usize> {
    let l = usize::from(label);
    if l == 0 || l > classes {
        return invalid(format!("label {label} outside 1..={classes}"));
    }
    Ok(l - 1)
}

struct SampleGrad {
    loss: f64,
    net: Gradients,
    blocks: Option<BlockGrad>,
}

fn joint_sample_grad(params: &JointParams, sample: &PatchSample, classes: usize) -> Result<SampleGrad> {
    let b = params.apertures.block_side().expect("periodic");
    let y = aperture_layer_forward(sample, &params.apertures)?;
    let (loss, net) = loss_and_gradients(&params.net, &patch_to_tensor(&y), class_index(sample.label, classes)?)?;
    let d_y = Patch::new(y.side(), y.depth(), net.input.clone())?;
    let blocks = aperture_layer_backward(sample, b, &d_y)?;
    Ok(SampleGrad {
        loss,
        net,
        blocks: Some(blocks),
    })
}

/// Mini-batch gradient descent shared by joint and fixed training.
///
/// `per_sample` may run concurrently; results are reduced in sample order.
fn run_epochs<F>(
    n: usize,
    cfg: &TrainConfig,
    state: &mut JointParams,
    mut after_step: impl FnMut(&mut JointParams),
    per_sample: F,
) -> Result<Vec<f64>>
where
    F: Fn(&JointParams, usize) -> Result<SampleGrad> + Sync,
{
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(cfg.seed, "shuffle");
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch).enumerate() {
            let results: Vec<Result<SampleGrad>> = batch.par_iter().map(|&i| per_sample(state, i)).collect();
            let mut net_grad = Gradients::zeros_like(&state.net);
            let mut block_grad: Option<BlockGrad> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let g = r?;
                batch_loss += g.loss;
                net_grad.accumulate(&g.net);
                if let Some(bg) = g.blocks {
                    match &mut block_grad {
                        None => block_grad = Some(bg),
                        Some(acc) => {
                            for (a, s) in acc.iter_mut().zip(&bg) {
                                for (x, y) in a.iter_mut().zip(s) {
                                    *x += y;
                                }
                            }
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {batch_no}")));
            }
            let inv = 1.0 / batch.len() as f64;
            net_grad.scale(inv);
            if let Some(bg) = &mut block_grad {
                bg.iter_mut().flatten().for_each(|v| *v *= inv);
            }
            if let Some(cap) = cfg.clip {
                let sq = net_grad.squared_norm() + block_grad.iter().flatten().flatten().map(|v| v * v).sum::<f64>();
                let norm = sq.sqrt();
                if norm > cap {
                    let s = cap / norm;
                    net_grad.scale(s);
                    block_grad.iter_mut().flatten().flatten().for_each(|v| *v *= s);
                }
            }
            sgd_step(&mut state.net, &net_grad, cfg.eta)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batch_no}: {e}")))?;
            if let (Some(bg), Some(blocks)) = (&block_grad, state.apertures.blocks_mut()) {
                for (block, g) in blocks.iter_mut().zip(bg) {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("aperture gradient at epoch {epoch}, batch {batch_no}")));
                    }
                    for (v, d) in block.values_mut().iter_mut().zip(g) {
                        *v -= cfg.eta * d;
                    }
                }
            }
            after_step(state);
            epoch_loss += batch_loss;
        }
        trace.push(epoch_loss / n as f64);
        log::debug!("epoch {epoch}: loss {:.6}", trace[epoch]);
    }
    Ok(trace)
}

/// Jointly optimizes the network weights and `k` periodic `b x b` blocks.
pub fn train_joint(train: &[PatchSample], cfg: &TrainConfig, k: usize, b: usize, classes: usize) -> Result<JointOutcome> {
    cfg.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::EmptySplit("no training samples".into()));
    };
    if train.iter().any(|s| s.scene.side() != cfg.patch_p || s.scene.depth() != first.scene.depth()) {
        return invalid(format!("all samples must be {0}x{0} patches with equal band counts", cfg.patch_p));
    }
    if b == 0 {
        return invalid("block side must be positive");
    }
    if k * b * b >= train.len() {
        log::warn!(
            "{} aperture variables for {} training samples; the block problem is underdetermined",
            k * b * b,
            train.len()
        );
    }
    let net = build_network_with(topology_for(cfg, k, classes), seed::derive_seed(cfg.seed, "net"))?;
    let apertures = match cfg.block_init {
        BlockInit::Uniform => uniform_periodic_set(k, b, seed::derive_seed(cfg.seed, "blocks"))?,
        BlockInit::Bernoulli => random_periodic_set(k, b, 0.5, seed::derive_seed(cfg.seed, "blocks"))?,
    };
    let mut state = JointParams { net, apertures };
    let mut clamp_calls = 0;
    let project = cfg.project_every_step;
    let trace = run_epochs(
        train.len(),
        cfg,
        &mut state,
        |s| {
            if project {
                s.apertures = clamp_blocks(&s.apertures);
                clamp_calls += 1;
            }
        },
        |s, i| joint_sample_grad(s, &train[i], classes),
    )?;
    if let Some(blocks) = state.apertures.blocks() {
        let outside = blocks.iter().flat_map(|b| b.values()).filter(|v| !(0.0..=1.0).contains(*v)).count();
        log::debug!("{outside} of {} block entries outside [0, 1] before clamping", k * b * b);
    }
    state.apertures = clamp_blocks(&state.apertures);
    clamp_calls += 1;
    Ok(JointOutcome {
        params: state,
        loss_trace: trace,
        clamp_calls,
    })
}

/// Trains the network alone on precomputed measurement patches.
pub fn train_fixed(train_measured: &[(Patch, u8)], cfg: &TrainConfig, classes: usize) -> Result<FixedOutcome> {
    cfg.validate()?;
    let Some((first, _)) = train_measured.first() else {
        return Err(Error::EmptySplit("no training samples".into()));
    };
    let k = first.depth();
    if train_measured.iter().any(|(p, _)| p.side() != cfg.patch_p || p.depth() != k) {
        return invalid(format!("all patches must be {0}x{0}x{k}", cfg.patch_p));
    }
    let net = build_network_with(topology_for(cfg, k, classes), seed::derive_seed(cfg.seed, "net"))?;
    // Placeholder aperture; never read because no block gradients are produced.
    let apertures = CodedApertureSet::periodic(vec![crate::coded_aperture::BasicBlock::filled(1, 1.0)?])?;
    let mut state = JointParams { net, apertures };
    let inputs: Vec<Tensor4> = train_measured.iter().map(|(p, _)| patch_to_tensor(p)).collect();
    let trace = run_epochs(
        train_measured.len(),
        cfg,
        &mut state,
        |_| {},
        |s, i| {
            let (loss, net) = loss_and_gradients(&s.net, &inputs[i], class_index(train_measured[i].1, classes)?)?;
            Ok(SampleGrad { loss, net, blocks: None })
        },
    )?;
    Ok(FixedOutcome {
        net: state.net,
        loss_trace: trace,
    })
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 1-based class predicted for a measurement patch.
pub fn predict_measured(net: &NetworkParams, patch: &Patch) -> Result<u8> {
    let (logits, _) = forward(net, &patch_to_tensor(patch))?;
    Ok((argmax(&softmax(&logits)) + 1) as u8)
}

/// 1-based class predicted for a scene sample coded by the joint apertures.
pub fn predict(params: &JointParams, sample: &PatchSample) -> Result<u8> {
    let y = patch_forward(&sample.scene, &params.apertures, sample.center.0, sample.center.1)?;
    predict_measured(&params.net, &y)
}

/// Mean loss of one sample through the whole coded pipeline.
pub fn joint_loss(params: &JointParams, sample: &PatchSample) -> Result<f64> {
    let classes = params.net.topology.classes;
    let y = aperture_layer_forward(sample, &params.apertures)?;
    loss_only(&params.net, &patch_to_tensor(&y), class_index(sample.label, classes)?)
}

/// Analytic `(network, block)` gradients of [`joint_loss`].
pub fn joint_gradients(params: &JointParams, sample: &PatchSample) -> Result<(f64, Gradients, BlockGrad)> {
    let classes = params.net.topology.classes;
    let y = aperture_layer_forward(sample, &params.apertures)?;
    let (logits, cache) = forward(&params.net, &patch_to_tensor(&y))?;
    let p = softmax(&logits);
    let label = class_index(sample.label, classes)?;
    let l = loss(&p, label)?;
    let net = backward(&params.net, &cache, &loss_grad(&p, label)?)?;
    let d_y = Patch::new(y.side(), y.depth(), net.input.clone())?;
    let blocks = aperture_layer_backward(sample, params.apertures.block_side().expect("periodic"), &d_y)?;
    Ok((l, net, blocks))
}

/// Central differences over every network parameter and every block entry.
pub fn joint_grad_check(params: &JointParams, sample: &PatchSample, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let (_, net_grad, block_grad) = joint_gradients(params, sample)?;
    let mut work = params.clone();
    let mut report = GradCheckReport::empty(tol);
    let names = params.net.group_names();
    let analytic = net_grad.groups();
    for (g, name) in names.iter().enumerate() {
        for i in 0..analytic[g].len() {
            let orig = work.net.groups()[g][i];
            work.net.groups_mut()[g][i] = orig + eps;
            let plus = joint_loss(&work, sample)?;
            work.net.groups_mut()[g][i] = orig - eps;
            let minus = joint_loss(&work, sample)?;
            work.net.groups_mut()[g][i] = orig;
            report.record(name, i, analytic[g][i], (plus - minus) / (2.0 * eps));
        }
    }
    for (k, gk) in block_grad.iter().enumerate() {
        let name = format!("block{k}");
        for (i, &a) in gk.iter().enumerate() {
            let orig = work.apertures.blocks().expect("periodic")[k].values()[i];
            work.apertures.blocks_mut().expect("periodic")[k].values_mut()[i] = orig + eps;
            let plus = joint_loss(&work, sample)?;
            work.apertures.blocks_mut().expect("periodic")[k].values_mut()[i] = orig - eps;
            let minus = joint_loss(&work, sample)?;
            work.apertures.blocks_mut().expect("periodic")[k].values_mut()[i] = orig;
            report.record(&name, i, a, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// On-disk `.ccnn.json` model. `apertures` is absent for networks trained
/// on uncoded scene patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub net: NetworkParams,
    pub apertures: Option<CodedApertureSet>,
    pub config: serde_json::Value,
    pub loss_trace: Vec<f64>,
}

impl ModelFile {
    pub fn joint(&self) -> Result<JointParams> {
        match &self.apertures {
            Some(a) if a.block_side().is_some() => Ok(JointParams {
                net: self.net.clone(),
                apertures: a.clone(),
            }),
            _ => invalid("model has no periodic aperture blocks"),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let model: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            field: "model".into(),
            message: e.to_string(),
        })?;
        if let Some(a) = &model.apertures {
            if a.snapshots() != model.net.topology.k {
                return Err(Error::Format {
                    field: "apertures".into(),
                    message: format!(
                        "{} aperture snapshots for a network of input depth {}",
                        a.snapshots(),
                        model.net.topology.k
                    ),
                });
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coded_aperture::BasicBlock;

    fn sample(p: usize, l: usize, center: (usize, usize), label: u8, seed_v: u64) -> PatchSample {
        use rand::Rng;
        let mut rng = seed::rng(seed_v, "sample");
        let values = (0..p * p * l).map(|_| rng.random_range(0.0..1.0)).collect();
        PatchSample {
            scene: Patch::new(p, l, values).unwrap(),
            center,
            label,
        }
    }

    #[test]
    fn aperture_layer_is_linear_in_blocks() {
        let s = sample(3, 3, (5, 6), 1, 1);
        let set = uniform_periodic_set(2, 2, 3).unwrap();
        let mut doubled = set.clone();
        for b in doubled.blocks_mut().unwrap() {
            b.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        let y1 = aperture_layer_forward(&s, &set).unwrap();
        let y2 = aperture_layer_forward(&s, &doubled).unwrap();
        for (a, b) in y1.values().iter().zip(y2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(y1, patch_forward(&s.scene, &set, 5, 6).unwrap());
    }

    #[test]
    fn closed_blocks_leave_only_bias_path() {
        let s = sample(3, 3, (1, 1), 2, 4);
        let set = CodedApertureSet::periodic(vec![BasicBlock::filled(2, 0.0).unwrap(); 2]).unwrap();
        let mut net = build_network_with(Topology::new(2, 3, 2), 5).unwrap();
        net.fc.biases = vec![0.5, -0.5];
        let y = aperture_layer_forward(&s, &set).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
        let (l, _) = forward(&net, &patch_to_tensor(&y)).unwrap();
        assert_eq!(l, vec![0.5, -0.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_block_gradient() {
        let s = sample(3, 2, (0, 0), 1, 2);
        let g = aperture_layer_backward(&s, 2, &Patch::zeros(3, 2)).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_voxel_gradient() {
        let mut scene = Patch::zeros(3, 2);
        let idx = scene.index(1, 2, 0);
        scene.values_mut()[idx] = 3.0;
        let s = PatchSample {
            scene,
            center: (4, 4),
            label: 1,
        };
        let mut d_y = Patch::zeros(3, 1);
        let j = d_y.index(0, 2, 0);
        d_y.values_mut()[j] = -0.5;
        let g = aperture_layer_backward(&s, 4, &d_y).unwrap();
        let nonzero: Vec<(usize, f64)> = g[0].iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        // Row (4 + 2 - 1) mod 4 = 1, column (4 + 0 - 1 + 1) mod 4 = 0.
        assert_eq!(nonzero, vec![(4, -1.5)]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let train: Vec<PatchSample> = (0..6).map(|i| sample(3, 3, (i, i + 1), (i % 2 + 1) as u8, i as u64)).collect();
        let cfg = TrainConfig {
            eta: 0.0,
            epochs: 2,
            batch: 4,
            seed: 3,
            patch_p: 3,
            ..TrainConfig::default()
        };
        let out = train_joint(&train, &cfg, 2, 2, 2).unwrap();
        let init_net = build_network_with(Topology::new(2, 3, 2), seed::derive_seed(3, "net")).unwrap();
        assert_eq!(out.params.net, init_net);
        let init_blocks = clamp_blocks(&uniform_periodic_set(2, 2, seed::derive_seed(3, "blocks")).unwrap());
        assert_eq!(out.params.apertures, init_blocks);
        assert_eq!(out.clamp_calls, 1);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = TrainConfig {
            patch_p: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(train_joint(&[], &cfg, 2, 2, 2), Err(Error::EmptySplit(_))));
        assert!(matches!(train_fixed(&[], &cfg, 2), Err(Error::EmptySplit(_))));
    }
}

//! A small deterministic 3D convolutional network engine.
//!
//! The topology is fixed: six 3D convolutions followed by one fully connected
//! layer feeding a softmax. Inputs are `(K, P, P, 1)` tensors with axes
//! (snapshot, row, col, channel); kernels are given as (snapshot, row, col)
//! extents. Every convolution adds a bias and applies the activation.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed order, so the
//! forward and backward passes are bit-reproducible.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Filters per convolution layer.
pub const FILTERS: [usize; 6] = [20, 20, 35, 35, 35, 35];

/// Kernel extents per convolution layer on (snapshot, row, col).
pub const KERNELS: [[usize; 3]; 6] = [[3, 3, 3], [3, 1, 1], [3, 3, 3], [3, 1, 1], [3, 1, 1], [2, 1, 1]];

/// Probabilities below this are floored before taking the log.
pub const PROB_FLOOR: f64 = 1e-300;

static PROB_FLOOR_HITS: AtomicUsize = AtomicUsize::new(0);

/// How many times [`loss`] has floored a zero probability in this process.
pub fn prob_floor_hits() -> usize {
    PROB_FLOOR_HITS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that keeps every axis length; even kernels pad after.
    #[default]
    Same,
    /// No padding; each axis shrinks by `kernel - 1`.
    Valid,
}

/// Dense 4D tensor `(d1, d2, d3, channels)`, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return invalid(format!("tensor dimensions must be positive, got {shape:?}"));
        }
        if data.len() != shape.iter().product::<usize>() {
            return invalid(format!("tensor {shape:?} needs {} values, got {}", shape.iter().product::<usize>(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor value".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, c: usize, ch: usize) -> usize {
        ((a * self.shape[1] + b) * self.shape[2] + c) * self.shape[3] + ch
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, ch: usize) -> f64 {
        self.data[self.index(a, b, c, ch)]
    }
}

/// Static description of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// Input depth: snapshots for compressed inputs, bands for raw patches.
    pub k: usize,
    pub p: usize,
    pub classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub padding: Padding,
}

impl Topology {
    pub fn new(k: usize, p: usize, classes: usize) -> Self {
        Self {
            k,
            p,
            classes,
            activation: Activation::Relu,
            padding: Padding::Same,
        }
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.k, self.p, self.p, 1]
    }

    /// Output shapes of the six convolutions.
    pub fn conv_shapes(&self) -> Result<Vec<[usize; 4]>> {
        let mut shape = self.input_shape();
        let mut out = Vec::with_capacity(6);
        for (layer, (kernel, &filters)) in KERNELS.iter().zip(&FILTERS).enumerate() {
            let mut next = [0, 0, 0, filters];
            for axis in 0..3 {
                next[axis] = match self.padding {
                    Padding::Same => shape[axis],
                    Padding::Valid => {
                        if shape[axis] < kernel[axis] {
                            return invalid(format!(
                                "valid convolution underflows at layer {} axis {axis}: {} < {}",
                                layer + 1,
                                shape[axis],
                                kernel[axis]
                            ));
                        }
                        shape[axis] - kernel[axis] + 1
                    }
                };
            }
            out.push(next);
            shape = next;
        }
        Ok(out)
    }

    pub fn flattened_size(&self) -> Result<usize> {
        Ok(self.conv_shapes()?.last().expect("six layers").iter().product())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: [usize; 3],
    pub in_channels: usize,
    pub filters: usize,
    /// `[filter][d1][d2][d3][in_channel]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    fn fan_in(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `[output][input]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Every trainable parameter of the network.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub topology: Topology,
    pub conv: Vec<ConvLayer>,
    pub fc: DenseLayer,
    generation: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.conv == other.conv && self.fc == other.fc
    }
}

impl NetworkParams {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Group names in the order used by [`Self::groups`].
    pub fn group_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(14);
        for i in 0..self.conv.len() {
            names.push(format!("conv{}.weights", i + 1));
            names.push(format!("conv{}.biases", i + 1));
        }
        names.push("fc.weights".into());
        names.push("fc.biases".into());
        names
    }

    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(14);
        for layer in &self.conv {
            out.push(&layer.weights);
            out.push(&layer.biases);
        }
        out.push(&self.fc.weights);
        out.push(&self.fc.biases);
        out
    }

    pub fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        for layer in &mut self.conv {
            out.push(&mut layer.weights);
            out.push(&mut layer.biases);
        }
        out.push(&mut self.fc.weights);
        out.push(&mut self.fc.biases);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    /// Marks the parameters as changed so older caches are rejected.
    pub fn touch(&mut self) {
        self.generation += 1;
    }
}

/// Builds the default network (ReLU, same padding).
pub fn build_network(k: usize, p: usize, classes: usize, seed: u64) -> Result<NetworkParams> {
    build_network_with(Topology::new(k, p, classes), seed)
}

pub fn build_network_with(topology: Topology, seed: u64) -> Result<NetworkParams> {
    let Topology { k, p, classes, .. } = topology;
    if k < 2 {
        return invalid(format!("input depth must be at least 2, got {k}"));
    }
    if p < 3 || p % 2 == 0 {
        return invalid(format!("patch size must be odd and at least 3, got {p}"));
    }
    if classes < 2 {
        return invalid(format!("need at least 2 classes, got {classes}"));
    }
    let flat = topology.flattened_size()?;

    let mut rng = seed::rng(seed, "network-init");
    let mut uniform = |count: usize, fan_in: usize| -> Vec<f64> {
        let bound = (6.0 / fan_in as f64).sqrt();
        (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
    };

    let mut conv = Vec::with_capacity(6);
    let mut in_channels = 1;
    for (kernel, &filters) in KERNELS.iter().zip(&FILTERS) {
        let mut layer = ConvLayer {
            kernel: *kernel,
            in_channels,
            filters,
            weights: Vec::new(),
            biases: vec![0.0; filters],
        };
        let taps = kernel.iter().product::<usize>() * in_channels;
        layer.weights = uniform(filters * taps, layer.fan_in());
        conv.push(layer);
        in_channels = filters;
    }
    let fc = DenseLayer {
        inputs: flat,
        outputs: classes,
        weights: uniform(classes * flat, flat),
        biases: vec![0.0; classes],
    };
    Ok(NetworkParams {
        topology,
        conv,
        fc,
        generation: 0,
    })
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    generation: u64,
    /// Input followed by each convolution's post-activation output.
    activations: Vec<Tensor4>,
}

/// Offsets `(before)` used for each axis of a kernel.
fn pads(kernel: [usize; 3], padding: Padding) -> [usize; 3] {
    match padding {
        Padding::Same => kernel.map(|k| (k - 1) / 2),
        Padding::Valid => [0; 3],
    }
}

fn conv_forward(layer: &ConvLayer, input: &Tensor4, out_shape: [usize; 4], padding: Padding, act: Activation) -> Tensor4 {
    let [d1, d2, d3, cin] = input.shape;
    let [k1, k2, k3] = layer.kernel;
    let [p1, p2, p3] = pads(layer.kernel, padding);
    let filters = layer.filters;
    let mut out = Tensor4::zeros(out_shape);
    for z in 0..out_shape[0] {
        for y in 0..out_shape[1] {
            for x in 0..out_shape[2] {
                let o = out.index(z, y, x, 0);
                let acc = &mut out.data[o..o + filters];
                acc.copy_from_slice(&layer.biases);
                for a in 0..k1 {
                    let Some(iz) = (z + a).checked_sub(p1).filter(|&v| v < d1) else { continue };
                    for b in 0..k2 {
                        let Some(iy) = (y + b).checked_sub(p2).filter(|&v| v < d2) else { continue };
                        for c in 0..k3 {
                            let Some(ix) = (x + c).checked_sub(p3).filter(|&v| v < d3) else { continue };
                            let i = ((iz * d2 + iy) * d3 + ix) * cin;
                            let src = &input.data[i..i + cin];
                            let tap = ((a * k2 + b) * k3 + c) * cin;
                            let stride = k1 * k2 * k3 * cin;
                            for (f, slot) in acc.iter_mut().enumerate() {
                                let w = &layer.weights[f * stride + tap..f * stride + tap + cin];
                                *slot += dot(src, w);
                            }
                        }
                    }
                }
                for v in acc.iter_mut() {
                    *v = act.apply(*v);
                }
            }
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logits for one input plus the cache needed by [`backward`].
pub fn forward(params: &NetworkParams, input: &Tensor4) -> Result<(Vec<f64>, Cache)> {
    let topo = params.topology;
    if input.shape != topo.input_shape() {
        return invalid(format!("input shape {:?} does not match network input {:?}", input.shape, topo.input_shape()));
    }
    let shapes = topo.conv_shapes()?;
    let mut activations = Vec::with_capacity(7);
    activations.push(input.clone());
    for (layer, &shape) in params.conv.iter().zip(&shapes) {
        let next = conv_forward(layer, activations.last().expect("input"), shape, topo.padding, topo.activation);
        activations.push(next);
    }
    let flat = &activations.last().expect("conv output").data;
    let fc = &params.fc;
    let logits = (0..fc.outputs)
        .map(|c| fc.biases[c] + dot(&fc.weights[c * fc.inputs..(c + 1) * fc.inputs], flat))
        .collect();
    Ok((
        logits,
        Cache {
            generation: params.generation,
            activations,
        },
    ))
}

/// Convenience wrapper returning only the logits.
pub fn logits(params: &NetworkParams, input: &Tensor4) -> Result<Vec<f64>> {
    forward(params, input).map(|(l, _)| l)
}

/// Numerically stable softmax (the max logit is subtracted first).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-ln p[label]` for a 0-based class index.
pub fn loss(p: &[f64], label: usize) -> Result<f64> {
    if label >= p.len() {
        return invalid(format!("label {label} out of range for {} classes", p.len()));
    }
    let mut pl = p[label];
    if pl < PROB_FLOOR {
        PROB_FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
        log::warn!("probability {pl:e} floored to {PROB_FLOOR:e}");
        pl = PROB_FLOOR;
    }
    Ok(-pl.ln())
}

/// Gradient of [`loss`] with respect to the logits: `p - onehot(label)`.
pub fn loss_grad(p: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= p.len() {
        return invalid(format!("label {label} out of range for {} classes", p.len()));
    }
    let mut g = p.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients with the same layout as [`NetworkParams`], plus the gradient
/// with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv: Vec<LayerGrad>,
    pub fc: LayerGrad,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            conv: params
                .conv
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            fc: LayerGrad {
                weights: vec![0.0; params.fc.weights.len()],
                biases: vec![0.0; params.fc.biases.len()],
            },
            input: vec![0.0; params.topology.input_shape().iter().product()],
        }
    }

    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(14);
        for g in &self.conv {
            out.push(&g.weights);
            out.push(&g.biases);
        }
        out.push(&self.fc.weights);
        out.push(&self.fc.biases);
        out
    }

    pub fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        for g in &mut self.conv {
            out.push(&mut g.weights);
            out.push(&mut g.biases);
        }
        out.push(&mut self.fc.weights);
        out.push(&mut self.fc.biases);
        out
    }

    /// Adds `other` parameter-wise (input gradients are not accumulated).
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.groups_mut() {
            for v in g {
                *v *= s;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.groups().iter().flat_map(|g| g.iter()).map(|v| v * v).sum()
    }
}

fn conv_backward(
    layer: &ConvLayer,
    input: &Tensor4,
    output: &Tensor4,
    grad_out: &[f64],
    padding: Padding,
    act: Activation,
    grad: &mut LayerGrad,
) -> Vec<f64> {
    let [d1, d2, d3, cin] = input.shape;
    let [k1, k2, k3] = layer.kernel;
    let [p1, p2, p3] = pads(layer.kernel, padding);
    let filters = layer.filters;
    let stride = k1 * k2 * k3 * cin;
    let mut grad_in = vec![0.0; input.data.len()];
    let os = output.shape;
    let mut pre = vec![0.0; filters];
    for z in 0..os[0] {
        for y in 0..os[1] {
            for x in 0..os[2] {
                let o = output.index(z, y, x, 0);
                for f in 0..filters {
                    pre[f] = grad_out[o + f] * act.derivative_from_output(output.data[o + f]);
                    grad.biases[f] += pre[f];
                }
                for a in 0..k1 {
                    let Some(iz) = (z + a).checked_sub(p1).filter(|&v| v < d1) else { continue };
                    for b in 0..k2 {
                        let Some(iy) = (y + b).checked_sub(p2).filter(|&v| v < d2) else { continue };
                        for c in 0..k3 {
                            let Some(ix) = (x + c).checked_sub(p3).filter(|&v| v < d3) else { continue };
                            let i = ((iz * d2 + iy) * d3 + ix) * cin;
                            let tap = ((a * k2 + b) * k3 + c) * cin;
                            for (f, &g) in pre.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let w0 = f * stride + tap;
                                let src = &input.data[i..i + cin];
                                for (dw, &s) in grad.weights[w0..w0 + cin].iter_mut().zip(src) {
                                    *dw += g * s;
                                }
                                let w = &layer.weights[w0..w0 + cin];
                                for (di, &wv) in grad_in[i..i + cin].iter_mut().zip(w) {
                                    *di += g * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Reverse-mode gradients of the forward computation given `dL/dlogits`.
pub fn backward(params: &NetworkParams, cache: &Cache, dlogits: &[f64]) -> Result<Gradients> {
    if cache.generation != params.generation {
        return Err(Error::InvalidState(format!(
            "cache from parameter generation {} used with generation {}",
            cache.generation, params.generation
        )));
    }
    let fc = &params.fc;
    if dlogits.len() != fc.outputs {
        return invalid(format!("expected {} logit gradients, got {}", fc.outputs, dlogits.len()));
    }
    let mut grads = Gradients::zeros_like(params);
    let flat = &cache.activations.last().expect("conv output").data;
    let mut grad_flat = vec![0.0; fc.inputs];
    for (c, &g) in dlogits.iter().enumerate() {
        grads.fc.biases[c] = g;
        let row = &fc.weights[c * fc.inputs..(c + 1) * fc.inputs];
        let drow = &mut grads.fc.weights[c * fc.inputs..(c + 1) * fc.inputs];
        for i in 0..fc.inputs {
            drow[i] = g * flat[i];
            grad_flat[i] += g * row[i];
        }
    }
    let topo = params.topology;
    let mut grad_out = grad_flat;
    for (idx, layer) in params.conv.iter().enumerate().rev() {
        grad_out = conv_backward(
            layer,
            &cache.activations[idx],
            &cache.activations[idx + 1],
            &grad_out,
            topo.padding,
            topo.activation,
            &mut grads.conv[idx],
        );
    }
    grads.input = grad_out;
    Ok(grads)
}

/// Loss and gradients for one labeled input (0-based class).
pub fn loss_and_gradients(params: &NetworkParams, input: &Tensor4, label: usize) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward(params, input)?;
    let p = softmax(&logits);
    let l = loss(&p, label)?;
    let g = backward(params, &cache, &loss_grad(&p, label)?)?;
    Ok((l, g))
}

pub fn loss_only(params: &NetworkParams, input: &Tensor4, label: usize) -> Result<f64> {
    let (logits, _) = forward(params, input)?;
    loss(&softmax(&logits), label)
}

/// Plain gradient descent `theta -= eta * grad` on every parameter.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, eta: f64) -> Result<()> {
    let names = params.group_names();
    for (g, group) in grads.groups().iter().enumerate() {
        if let Some(i) = group.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {}[{i}] = {}", names[g], group[i])));
        }
    }
    for (dst, src) in params.groups_mut().into_iter().zip(grads.groups()) {
        for (p, g) in dst.iter_mut().zip(src) {
            *p -= eta * g;
        }
    }
    params.touch();
    Ok(())
}

/// Hyper-parameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub patch_p: usize,
    /// Cap on the global gradient norm of each step.
    pub clip: Option<f64>,
    pub activation: Activation,
    pub padding: Padding,
    /// Joint training only: initial block distribution.
    pub block_init: BlockInit,
    /// Joint training only: clamp blocks after every step as well.
    pub project_every_step: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockInit {
    #[default]
    Uniform,
    Bernoulli,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            epochs: 100,
            batch: 64,
            seed: 0,
            patch_p: 7,
            clip: None,
            activation: Activation::Relu,
            padding: Padding::Same,
            block_init: BlockInit::Uniform,
            project_every_step: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return invalid(format!("learning rate must be finite and non-negative, got {}", self.eta));
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if self.batch == 0 {
            return invalid("batch must be at least 1");
        }
        if self.patch_p % 2 == 0 {
            return invalid(format!("patch size must be odd, got {}", self.patch_p));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return invalid(format!("clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Group name and index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub(crate) fn empty(tol: f64) -> Self {
        Self {
            max_rel_err: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            tol,
        }
    }

    pub(crate) fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((name.to_string(), index));
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "checked {} coordinates, max relative error {:.3e}", self.checked, self.max_rel_err)?;
        if let Some((name, i)) = &self.worst {
            write!(f, " at {name}[{i}] (analytic {:.6e}, numeric {:.6e})", self.analytic, self.numeric)?;
        }
        Ok(())
    }
}

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central-difference check of every network parameter.
pub fn grad_check(params: &NetworkParams, input: &Tensor4, label: usize, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(params, input, label)?;
    grad_check_against(params, input, label, eps, tol, &analytic)
}

/// Like [`grad_check`] but compares against caller-supplied gradients.
pub fn grad_check_against(
    params: &NetworkParams,
    input: &Tensor4,
    label: usize,
    eps: f64,
    tol: f64,
    analytic: &Gradients,
) -> Result<GradCheckReport> {
    let names = params.group_names();
    let mut work = params.clone();
    let mut report = GradCheckReport::empty(tol);
    let analytic_groups = analytic.groups();
    for (g, name) in names.iter().enumerate() {
        for i in 0..analytic_groups[g].len() {
            let orig = work.groups()[g][i];
            work.groups_mut()[g][i] = orig + eps;
            let plus = loss_only(&work, input, label)?;
            work.groups_mut()[g][i] = orig - eps;
            let minus = loss_only(&work, input, label)?;
            work.groups_mut()[g][i] = orig;
            report.record(name, i, analytic_groups[g][i], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// On-disk `.net.json` layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    topology: Topology,
    conv: Vec<ConvFile>,
    fc: DenseFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConvFile {
    kernel: [usize; 3],
    in_channels: usize,
    filters: usize,
    /// One row per filter.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseFile {
    inputs: usize,
    outputs: usize,
    /// One row per class.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl Serialize for NetworkParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let file = NetworkFile {
            topology: self.topology,
            conv: self
                .conv
                .iter()
                .map(|l| ConvFile {
                    kernel: l.kernel,
                    in_channels: l.in_channels,
                    filters: l.filters,
                    weights: l.weights.chunks(l.fan_in()).map(<[f64]>::to_vec).collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
            fc: DenseFile {
                inputs: self.fc.inputs,
                outputs: self.fc.outputs,
                weights: self.fc.weights.chunks(self.fc.inputs).map(<[f64]>::to_vec).collect(),
                biases: self.fc.biases.clone(),
            },
        };
        file.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = NetworkFile::deserialize(d)?;
        NetworkParams::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<NetworkFile> for NetworkParams {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        // Rebuild the expected skeleton and check every shape against it.
        let skeleton = build_network_with(file.topology, 0)?;
        let bad = |field: String, msg: &str| Error::Format {
            field,
            message: msg.to_string(),
        };
        if file.conv.len() != skeleton.conv.len() {
            return Err(bad("conv".into(), "wrong number of convolution layers"));
        }
        let mut conv = Vec::with_capacity(file.conv.len());
        for (i, (f, s)) in file.conv.into_iter().zip(&skeleton.conv).enumerate() {
            let weights = f.weights.concat();
            if f.kernel != s.kernel || f.in_channels != s.in_channels || f.filters != s.filters {
                return Err(bad(format!("conv[{i}]"), "layer shape does not match topology"));
            }
            if weights.len() != s.weights.len() || f.biases.len() != s.biases.len() {
                return Err(bad(format!("conv[{i}].weights"), "parameter count does not match topology"));
            }
            conv.push(ConvLayer {
                kernel: f.kernel,
                in_channels: f.in_channels,
                filters: f.filters,
                weights,
                biases: f.biases,
            });
        }
        let weights = file.fc.weights.concat();
        if file.fc.inputs != skeleton.fc.inputs
            || file.fc.outputs != skeleton.fc.outputs
            || weights.len() != skeleton.fc.weights.len()
            || file.fc.biases.len() != skeleton.fc.biases.len()
        {
            return Err(bad("fc".into(), "fully connected layer does not match topology"));
        }
        let params = NetworkParams {
            topology: file.topology,
            conv,
            fc: DenseLayer {
                inputs: file.fc.inputs,
                outputs: file.fc.outputs,
                weights,
                biases: file.fc.biases,
            },
            generation: 0,
        };
        if params.groups().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(bad("weights".into(), "non-finite parameter"));
        }
        Ok(params)
    }
}

pub fn save_network(params: &NetworkParams, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(params)?)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<std::path::Path>) -> Result<NetworkParams> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        field: "network".into(),
        message: e.to_string(),
    })
}

//! Fully-connected autoencoders with square activations, mask-aware Adam
//! training, and checkpoint serialization.
//!
//! The activation is x^2 after every layer, including the last unless
//! `square_last` is disabled. Squaring is what a low-depth CKKS circuit can
//! afford, and it keeps the mock-HE simulator's cost model faithful.
//!
//! Pruning is represented by a 0/1 mask per weight matrix. Training masks
//! gradients before the optimizer step, so Adam's moments of pruned weights
//! stay exactly zero, and re-applies the mask to the weights afterwards.
//! A pruned weight is therefore exactly 0.0 at all times.

use crate::data::Dataset;
use crate::exactsum::exact_dot;
use crate::matrix::Matrix;
use crate::permute::LayerPermutations;
use crate::rng::{self, stream};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Autoenc1,
    Autoenc2,
    Autoenc3,
}

impl Arch {
    /// Boundary sizes from input to output.
    pub fn dims(self) -> Vec<usize> {
        match self {
            Arch::Autoenc1 => vec![784, 32, 784],
            Arch::Autoenc2 => vec![784, 64, 784],
            Arch::Autoenc3 => vec![784, 64, 32, 64, 784],
        }
    }

    /// Default (initial training, retraining) epoch counts.
    pub fn default_epochs(self) -> (usize, usize) {
        match self {
            Arch::Autoenc1 => (20, 10),
            Arch::Autoenc2 | Arch::Autoenc3 => (30, 20),
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "autoenc1" => Ok(Arch::Autoenc1),
            "autoenc2" => Ok(Arch::Autoenc2),
            "autoenc3" => Ok(Arch::Autoenc3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?}, expected autoenc1, autoenc2 or autoenc3"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Autoenc1 => "autoenc1",
            Arch::Autoenc2 => "autoenc2",
            Arch::Autoenc3 => "autoenc3",
        }
    }
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// One fully-connected layer. `weights` and `mask` are `out_dim x in_dim`;
/// the mask holds exactly 0.0 or 1.0 per cell.
#[derive(Debug, Clone)]
pub struct FCLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub mask: Matrix,
}

impl FCLayer {
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn active_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<FCLayer>,
    /// Apply the square activation after the final layer too. The default
    /// everywhere in this crate; disable for a linear output head.
    pub square_last: bool,
}

/// Uniform init in [-sqrt(1/in_dim), sqrt(1/in_dim)], one generator stream
/// per layer so layer counts never shift each other's draws.
pub fn build_autoencoder(arch: Arch, seed: u64) -> Network {
    let dims = arch.dims();
    Network::with_dims(&dims, seed)
}

impl Network {
    /// Network with the given boundary sizes, freshly initialized and fully
    /// dense (mask all ones).
    pub fn with_dims(dims: &[usize], seed: u64) -> Network {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let bound = (1.0 / in_dim as f64).sqrt();
            let mut rng = rng::for_stream(seed, stream::WEIGHT_INIT + l as u64);
            let data: Vec<f64> = (0..out_dim * in_dim)
                .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
                .collect();
            layers.push(FCLayer {
                weights: Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
                bias: vec![0.0; out_dim],
                mask: Matrix::from_vec(out_dim, in_dim, vec![1.0; out_dim * in_dim])
                    .expect("sized above"),
            });
        }
        Network { layers, square_last: true }
    }

    /// Boundary sizes from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len()).sum()
    }

    pub fn active_weights(&self) -> usize {
        self.layers.iter().map(|l| l.active_count()).sum()
    }

    /// Force every masked weight to exactly zero.
    pub fn apply_masks(&mut self) {
        for layer in &mut self.layers {
            let mask = layer.mask.data().to_vec();
            for (w, m) in layer.weights.data_mut().iter_mut().zip(&mask) {
                *w *= m;
            }
        }
    }

    fn activate(&self, layer_idx: usize, z: &mut Matrix) {
        if layer_idx + 1 < self.layers.len() || self.square_last {
            for v in z.data_mut() {
                *v = *v * *v;
            }
        }
    }

    /// Batched forward pass; `batch` is samples x in_dim.
    pub fn forward(&self, batch: &Matrix) -> Matrix {
        assert_eq!(batch.cols(), self.in_dim(), "input width mismatch");
        let mut a = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.matmul_nt(&layer.weights);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            self.activate(l, &mut z);
            a = z;
        }
        a
    }

    /// Forward pass whose dot products use exact order-invariant
    /// accumulation. Output bits depend only on the multiset of (weight,
    /// activation) pairs per neuron, so a purely reindexed network produces
    /// bit-identical results. Used to verify permutation equivalence.
    pub fn forward_exact(&self, batch: &Matrix) -> Matrix {
        assert_eq!(batch.cols(), self.in_dim(), "input width mismatch");
        let mut a = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(a.rows(), layer.out_dim());
            for r in 0..a.rows() {
                let x = a.row(r);
                for o in 0..layer.out_dim() {
                    let dot = exact_dot(x, layer.weights.row(o));
                    z.set(r, o, dot + layer.bias[o]);
                }
            }
            self.activate(l, &mut z);
            a = z;
        }
        a
    }
}

/// Mean squared error over every element of the two matrices.
pub fn mse_loss(prediction: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(prediction.rows(), target.rows(), "row count mismatch");
    assert_eq!(prediction.cols(), target.cols(), "column count mismatch");
    let mut sum = 0.0;
    for (p, t) in prediction.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d * d;
    }
    sum / prediction.data().len() as f64
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

pub struct Grads {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

/// Loss and gradients for one batch, with gradient masking applied: the
/// gradient of every masked weight is exactly zero.
pub fn loss_and_grads(net: &Network, input: &Matrix, target: &Matrix) -> (f64, Grads) {
    let count = net.layers.len();
    // Forward, caching pre-activations and activations.
    let mut acts = Vec::with_capacity(count + 1);
    let mut pre = Vec::with_capacity(count);
    acts.push(input.clone());
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = acts[l].matmul_nt(&layer.weights);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let mut a = z.clone();
        net.activate(l, &mut a);
        pre.push(z);
        acts.push(a);
    }
    let output = acts.last().unwrap();
    let loss = mse_loss(output, target);

    // d loss / d output.
    let n = (output.rows() * output.cols()) as f64;
    let mut d_act = Matrix::zeros(output.rows(), output.cols());
    for ((d, p), t) in d_act
        .data_mut()
        .iter_mut()
        .zip(output.data())
        .zip(target.data())
    {
        *d = 2.0 * (p - t) / n;
    }

    let mut grads = Grads { weights: Vec::new(), bias: Vec::new() };
    for l in (0..count).rev() {
        let layer = &net.layers[l];
        let squared = l + 1 < count || net.square_last;
        // Through the activation: a = z^2 means da/dz = 2z.
        let mut d_z = d_act;
        if squared {
            for (d, z) in d_z.data_mut().iter_mut().zip(pre[l].data()) {
                *d *= 2.0 * z;
            }
        }
        let mut d_w = d_z.matmul_tn(&acts[l]);
        for (g, m) in d_w.data_mut().iter_mut().zip(layer.mask.data()) {
            *g *= m;
        }
        let mut d_b = vec![0.0; layer.out_dim()];
        for r in 0..d_z.rows() {
            for (g, v) in d_b.iter_mut().zip(d_z.row(r)) {
                *g += v;
            }
        }
        d_act = d_z.matmul_nn(&layer.weights);
        grads.weights.push(d_w);
        grads.bias.push(d_b);
    }
    grads.weights.reverse();
    grads.bias.reverse();
    (loss, grads)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            v_w: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            m_b: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
            v_b: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    fn update(&mut self, net: &mut Network, grads: &Grads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..net.layers.len() {
            let layer = &mut net.layers[l];
            let gw = grads.weights[l].data();
            let m = self.m_w[l].data_mut();
            let v = self.v_w[l].data_mut();
            let w = layer.weights.data_mut();
            for i in 0..w.len() {
                let g = gw[i];
                if g == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                    // Pruned cells (and never-moved ones) need no work.
                    continue;
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            // Mask re-application keeps pruned weights at exactly zero even
            // if a future optimizer variant touches them.
            let mask = layer.mask.data().to_vec();
            for (wv, mv) in layer.weights.data_mut().iter_mut().zip(&mask) {
                *wv *= mv;
            }
            let gb = &grads.bias[l];
            let mb = &mut self.m_b[l];
            let vb = &mut self.v_b[l];
            for i in 0..layer.bias.len() {
                mb[i] = self.beta1 * mb[i] + (1.0 - self.beta1) * gb[i];
                vb[i] = self.beta2 * vb[i] + (1.0 - self.beta2) * gb[i] * gb[i];
                layer.bias[i] -= self.lr * (mb[i] / c1) / ((vb[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch batch shuffle; the order is a pure function of
    /// (seed, epoch).
    pub seed: u64,
    /// Optional feature gather applied to inputs: x[j] = sample[map[j]].
    /// Used when training a permuted network in its permuted coordinates.
    pub input_map: Option<Vec<usize>>,
    /// Same for the reconstruction target.
    pub target_map: Option<Vec<usize>>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig { epochs, batch_size, seed, input_map: None, target_map: None }
    }
}

fn gather_rows(data: &Dataset, indices: &[usize], map: Option<&[usize]>, dim: usize) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), dim);
    for (r, &idx) in indices.iter().enumerate() {
        let src = data.sample(idx);
        let dst = out.row_mut(r);
        match map {
            None => dst.copy_from_slice(src),
            Some(map) => {
                for (d, &j) in dst.iter_mut().zip(map) {
                    *d = src[j];
                }
            }
        }
    }
    out
}

/// Minimize reconstruction MSE with Adam. Returns the mean training loss per
/// epoch. Deterministic: a fixed (network, dataset, config, optimizer state)
/// reproduces the loss history bit for bit.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<Vec<f64>> {
    if data.count() == 0 {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if let Some(map) = &cfg.input_map {
        if map.len() != net.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("input map of length {}", net.in_dim()),
                got: format!("{}", map.len()),
            });
        }
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.count()).collect();
    for epoch in 0..cfg.epochs {
        indices.sort_unstable();
        let mut rng = rng::for_stream(cfg.seed, stream::SHUFFLE + epoch as u64);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let input = gather_rows(data, chunk, cfg.input_map.as_deref(), net.in_dim());
            let target = gather_rows(data, chunk, cfg.target_map.as_deref(), net.out_dim());
            let (loss, grads) = loss_and_grads(net, &input, &target);
            adam.update(net, &grads);
            loss_sum += loss * chunk.len() as f64;
        }
        history.push(loss_sum / data.count() as f64);
    }
    Ok(history)
}

/// Mean reconstruction MSE over the whole dataset, evaluated in fixed-size
/// chunks. The result is a mean of per-element errors, so it is independent
/// of sample order up to floating-point reassociation.
pub fn evaluate(net: &Network, data: &Dataset) -> f64 {
    evaluate_mapped(net, data, None, None)
}

/// [`evaluate`] with optional input/target feature gathers, for networks in
/// permuted coordinates.
pub fn evaluate_mapped(
    net: &Network,
    data: &Dataset,
    input_map: Option<&[usize]>,
    target_map: Option<&[usize]>,
) -> f64 {
    assert!(data.count() > 0, "evaluation dataset is empty");
    let mut err_sum = 0.0;
    let chunk_size = 256;
    let all: Vec<usize> = (0..data.count()).collect();
    for chunk in all.chunks(chunk_size) {
        let input = gather_rows(data, chunk, input_map, net.in_dim());
        let target = gather_rows(data, chunk, target_map, net.out_dim());
        let out = net.forward(&input);
        for (p, t) in out.data().iter().zip(target.data()) {
            let d = p - t;
            err_sum += d * d;
        }
    }
    err_sum / (data.count() * net.out_dim()) as f64
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_FORMAT: &str = "tileprune-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<f64>,
    bias: Vec<f64>,
    mask: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: Vec<usize>,
    square_last: bool,
    layers: Vec<LayerFile>,
    perms: Option<Vec<Vec<usize>>>,
    seed: u64,
}

/// Write the network (and, if present, its boundary permutations) as a
/// versioned JSON container. JSON numbers round-trip `f64` exactly.
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    perms: Option<&LayerPermutations>,
    seed: u64,
) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: net.dims(),
        square_last: net.square_last,
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.data().to_vec(),
                bias: l.bias.clone(),
                mask: l.mask.data().iter().map(|&m| (m != 0.0) as u8).collect(),
            })
            .collect(),
        perms: perms.map(|p| p.boundaries.clone()),
        seed,
    };
    let json = serde_json::to_vec(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Counterpart of [`save_checkpoint`], with structural validation: version,
/// dimension consistency, mask values, and mask/weight agreement.
pub fn load_checkpoint(path: &Path) -> Result<(Network, Option<LayerPermutations>, u64)> {
    let bytes = std::fs::read(path)?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "not a checkpoint file (format tag {:?})",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "checkpoint version {} unsupported, this build reads version {CHECKPOINT_VERSION}",
            file.version
        )));
    }
    if file.dims.len() < 2 || file.layers.len() != file.dims.len() - 1 {
        return Err(Error::InvalidConfig(format!(
            "dims {:?} inconsistent with {} layers",
            file.dims,
            file.layers.len()
        )));
    }
    let mut layers = Vec::new();
    for (l, lf) in file.layers.iter().enumerate() {
        let (in_dim, out_dim) = (file.dims[l], file.dims[l + 1]);
        if lf.weights.len() != in_dim * out_dim
            || lf.bias.len() != out_dim
            || lf.mask.len() != in_dim * out_dim
        {
            return Err(Error::InvalidConfig(format!(
                "layer {l} sizes inconsistent with dims {in_dim}->{out_dim}"
            )));
        }
        if lf.mask.iter().any(|&m| m > 1) {
            return Err(Error::Structural(format!("layer {l} mask holds non-binary values")));
        }
        for (i, (&w, &m)) in lf.weights.iter().zip(&lf.mask).enumerate() {
            if m == 0 && w != 0.0 {
                return Err(Error::Structural(format!(
                    "layer {l} cell {i} is masked but its weight is {w}"
                )));
            }
        }
        layers.push(FCLayer {
            weights: Matrix::from_vec(out_dim, in_dim, lf.weights.clone())?,
            bias: lf.bias.clone(),
            mask: Matrix::from_vec(
                out_dim,
                in_dim,
                lf.mask.iter().map(|&m| m as f64).collect(),
            )?,
        });
    }
    let net = Network { layers, square_last: file.square_last };
    let perms = match file.perms {
        None => None,
        Some(boundaries) => Some(LayerPermutations::new(boundaries, &file.dims)?),
    };
    Ok((net, perms, file.seed))
}

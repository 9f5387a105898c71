//! SKAN classifier: a stack of single-parameterized layers.
//!
//! Each layer is the pure edge sum `y_j = Σ_i f(k_ji, x_i)` with no bias or
//! residual branch. All layers of a network share one [`SFuncKind`].

use std::fs;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkanError};
use crate::linalg::{skan_backward_kernel, skan_forward_kernel, skan_param_grad_kernel, Matrix};
use crate::sfunc::SFuncKind;

pub const DEFAULT_ARCH: [usize; 3] = [784, 100, 10];

/// Human-readable description of the parameter initialization, echoed into result files.
pub const INIT_RULE: &str = "K[j][i] ~ Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), ChaCha8 seeded per network";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkanLayer {
    pub kind: SFuncKind,
    /// `out × in`; `params[j][i]` is the parameter on the edge from input `i` to output `j`.
    pub params: Matrix,
}

impl SkanLayer {
    pub fn inputs(&self) -> usize {
        self.params.cols()
    }

    pub fn outputs(&self) -> usize {
        self.params.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        skan_forward_kernel(self.kind, &self.params, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkanNetwork {
    kind: SFuncKind,
    layers: Vec<SkanLayer>,
}

/// Cached layer inputs from a forward pass, consumed by [`SkanNetwork::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub inputs: Vec<Matrix>,
    pub logits: Matrix,
}

impl SkanNetwork {
    /// Random network with `K ~ Uniform(±1/√fan_in)` drawn from a ChaCha8 stream seeded by `seed`.
    pub fn init(arch: &[usize], kind: SFuncKind, seed: u64) -> Result<Self> {
        validate_arch(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite and positive");
                let params = Matrix::from_fn(fan_out, fan_in, |_, _| dist.sample(&mut rng));
                SkanLayer { kind, params }
            })
            .collect();
        Ok(SkanNetwork { kind, layers })
    }

    /// Assembles a network from explicit parameter matrices (`out × in`, first layer first).
    pub fn from_params(kind: SFuncKind, params: Vec<Matrix>) -> Result<Self> {
        let layers: Vec<SkanLayer> = params.into_iter().map(|params| SkanLayer { kind, params }).collect();
        let net = SkanNetwork { kind, layers };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(SkanError::Config("network needs at least one layer".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.kind != self.kind {
                return Err(SkanError::Config(format!(
                    "layer {l} uses {} but the network uses {}",
                    layer.kind, self.kind
                )));
            }
            if layer.inputs() == 0 || layer.outputs() == 0 {
                return Err(SkanError::Config(format!("layer {l} has an empty dimension")));
            }
            if !layer.params.is_finite() {
                return Err(SkanError::Config(format!("layer {l} has non-finite parameters")));
            }
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(SkanError::dim(
                    "SkanNetwork",
                    format!("layer {} input width {}", l + 1, pair[0].outputs()),
                    pair[1].inputs(),
                ));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> SFuncKind {
        self.kind
    }

    pub fn layers(&self) -> &[SkanLayer] {
        &self.layers
    }

    /// Layer widths, input first.
    pub fn arch(&self) -> Vec<usize> {
        let mut arch = vec![self.layers[0].inputs()];
        arch.extend(self.layers.iter().map(SkanLayer::outputs));
        arch
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.as_slice().len()).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().map(|l| &mut l.params).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardTape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&current)?;
            inputs.push(current);
            current = next;
        }
        let tape = ForwardTape { inputs, logits: current.clone() };
        Ok((current, tape))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut current = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            current = layer.forward(&current)?;
        }
        Ok(current)
    }

    /// `∂loss/∂K` for every layer, given `∂loss/∂logits` and the tape of the matching forward pass.
    pub fn backward(&self, tape: &ForwardTape, d_logits: &Matrix) -> Result<Vec<Matrix>> {
        if tape.inputs.len() != self.layers.len() {
            return Err(SkanError::Internal(format!(
                "tape has {} layer inputs, network has {} layers",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        for (l, (layer, input)) in self.layers.iter().zip(&tape.inputs).enumerate() {
            if input.cols() != layer.inputs() || input.rows() != d_logits.rows() {
                return Err(SkanError::Internal(format!(
                    "tape input {l} is {}x{}, expected {}x{}",
                    input.rows(),
                    input.cols(),
                    d_logits.rows(),
                    layer.inputs()
                )));
            }
        }
        if d_logits.cols() != self.num_classes() {
            return Err(SkanError::dim("backward", self.num_classes(), d_logits.cols()));
        }

        let mut grads = vec![Matrix::zeros(0, 0); self.layers.len()];
        let mut upstream = d_logits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.inputs[l];
            if l == 0 {
                grads[0] = skan_param_grad_kernel(layer.kind, &layer.params, input, &upstream)?;
            } else {
                let (dk, dx) = skan_backward_kernel(layer.kind, &layer.params, input, &upstream)?;
                grads[l] = dk;
                upstream = dx;
            }
        }
        Ok(grads)
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn to_checkpoint(&self, seed: Option<u64>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            arch: self.arch(),
            seed,
            init: INIT_RULE.to_string(),
            test_accuracy: None,
            test_loss: None,
            layers: self.layers.iter().map(|l| l.params.clone()).collect(),
        }
    }
}

fn validate_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(SkanError::Config(format!("architecture needs at least input and output widths, got {arch:?}")));
    }
    if arch.contains(&0) {
        return Err(SkanError::Config(format!("architecture widths must be >= 1, got {arch:?}")));
    }
    Ok(())
}

pub fn init_network(arch: &[usize], kind: SFuncKind, seed: u64) -> Result<SkanNetwork> {
    SkanNetwork::init(arch, kind, seed)
}

pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn check_labels(logits: &Matrix, labels: &[u8]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(SkanError::EmptyDataset);
    }
    if labels.len() != logits.rows() {
        return Err(SkanError::dim("softmax_cross_entropy", logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(SkanError::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Per-sample `-log softmax(logits)[label]`, stabilized by max subtraction.
pub fn per_sample_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            sum.ln() + max - row[labels[r] as usize]
        })
        .collect())
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot) / batch`.
#[allow(clippy::needless_range_loop)]
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    check_labels(logits, labels)?;
    let n = logits.rows();
    let scale = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut total = 0.0;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut sum = 0.0;
        for (gc, &v) in g.iter_mut().zip(row) {
            *gc = (v - max).exp();
            sum += *gc;
        }
        let label = labels[r] as usize;
        total += sum.ln() + max - row[label];
        for gc in g.iter_mut() {
            *gc = *gc / sum * scale;
        }
        g[label] -= scale;
    }
    Ok((total / n as f64, grad))
}

pub const CHECKPOINT_FORMAT: &str = "skan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model record. JSON with shortest round-trip float formatting, so
/// save/load reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: SFuncKind,
    pub arch: Vec<usize>,
    pub seed: Option<u64>,
    pub init: String,
    /// Test accuracy measured when the checkpoint was written, if any.
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub layers: Vec<Matrix>,
}

impl Checkpoint {
    pub fn into_network(self) -> Result<SkanNetwork> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(SkanError::Format(format!("not a checkpoint (format tag '{}')", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(SkanError::Format(format!("unsupported checkpoint version {}", self.version)));
        }
        let net = SkanNetwork::from_params(self.kind, self.layers)?;
        if net.arch() != self.arch {
            return Err(SkanError::Format(format!(
                "checkpoint arch {:?} disagrees with its layers {:?}",
                self.arch,
                net.arch()
            )));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

//! Classifier architectures over `2×E×E` covariance features.

use moe_core::channel::mix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Mode, Param, Parallel, Relu, Residual,
    Sequential,
};
use crate::loss::{argmax, softmax};
use crate::tensor::Tensor;

pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const RCNN_BRANCH_CHANNELS: usize = 8;
pub const RCNN_HEAD: [usize; 1] = [128];
pub const MLP_HIDDEN: [usize; 6] = [256, 1024, 512, 256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Rcnn,
    Mlp,
}

/// Everything needed to rebuild a network's layer graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub num_classes: usize,
    pub elements: usize,
    /// Channels per convolution branch; ignored by the MLP.
    pub branch_channels: usize,
    /// Hidden dense widths.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl ArchSpec {
    pub fn rcnn(num_classes: usize, elements: usize, seed: u64) -> Self {
        Self {
            kind: ArchKind::Rcnn,
            num_classes,
            elements,
            branch_channels: RCNN_BRANCH_CHANNELS,
            hidden: RCNN_HEAD.to_vec(),
            dropout: DEFAULT_DROPOUT,
            seed,
        }
    }

    pub fn mlp(num_classes: usize, elements: usize, seed: u64) -> Self {
        Self {
            kind: ArchKind::Mlp,
            num_classes,
            elements,
            branch_channels: 0,
            hidden: MLP_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.elements, 6 | 12) {
            return Err(Error::Config(format!("unsupported element count {}", self.elements)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("{} classes", self.num_classes)));
        }
        if self.kind == ArchKind::Rcnn && self.branch_channels == 0 {
            return Err(Error::Config("zero branch channels".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        Ok(())
    }
}

pub struct Network {
    spec: ArchSpec,
    root: Sequential,
    /// Adam updates applied so far.
    pub(crate) steps: u64,
}

impl Network {
    pub fn build(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let root = match spec.kind {
            ArchKind::Rcnn => rcnn_layers(spec, &mut rng)?,
            ArchKind::Mlp => mlp_layers(spec, &mut rng)?,
        };
        Ok(Self { spec: spec.clone(), root, steps: 0 })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.steps
    }

    /// Input shape of one record.
    pub fn input_shape(&self) -> [usize; 3] {
        [2, self.spec.elements, self.spec.elements]
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let e = self.spec.elements;
        if x.shape().len() != 4 || x.shape()[1..] != [2, e, e] {
            return Err(Error::Shape(format!("network expects N×2×{e}×{e}, got {:?}", x.shape())));
        }
        self.root.forward(x, mode)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        self.root.backward(grad).map(|_| ())
    }

    pub fn zero_grad(&mut self) {
        self.root.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.root.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.root.visit_mut(f);
    }

    /// Re-seeds every dropout layer.
    pub fn reseed(&mut self, seed: u64) {
        self.root.reseed(seed);
    }

    pub fn as_layer_mut(&mut self) -> &mut dyn Layer {
        &mut self.root
    }

    /// All parameter and state values in visiting order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    /// Inference-mode class predictions for a batch.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<Prediction>> {
        let logits = self.forward(x, Mode::Infer)?;
        Ok((0..logits.batch()).map(|i| Prediction::from_logits(logits.row(i))).collect())
    }
}

/// Trainable parameter count.
pub fn count_parameters(net: &Network) -> usize {
    let mut n = 0;
    net.visit(&mut |p| {
        if p.trainable {
            n += p.len();
        }
    });
    n
}

pub fn build_rcnn(num_classes: usize, elements: usize, seed: u64) -> Result<Network> {
    Network::build(&ArchSpec::rcnn(num_classes, elements, seed))
}

pub fn build_mlp(num_classes: usize, elements: usize, seed: u64) -> Result<Network> {
    Network::build(&ArchSpec::mlp(num_classes, elements, seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// One-based class index.
    pub class: u8,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self {
            class: argmax(logits) as u8 + 1,
            probabilities: softmax(logits),
        }
    }
}

fn branch(
    name: &str,
    kernel: (usize, usize),
    channels: usize,
    dropout: f64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Box<dyn Layer>> {
    Ok(Box::new(Sequential::new(vec![
        Box::new(Conv2d::new(&format!("{name}.conv"), 2, channels, kernel, 1, rng)?),
        Box::new(Relu::new()),
        Box::new(BatchNorm::new(&format!("{name}.bn"), channels)),
        Box::new(MaxPool2d::new()),
        Box::new(Dropout::new(dropout, seed)?),
    ])))
}

/// Two asymmetric-kernel branches merged by concatenation, a residual 3×3
/// convolution, grouped asymmetric convolutions and a dense head.
fn rcnn_layers(spec: &ArchSpec, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    let w = spec.branch_channels;
    let merged = 2 * w;
    let e = spec.elements;
    let mut layers: Vec<Box<dyn Layer>> = vec![
        Box::new(Parallel::new(vec![
            branch("row", (1, 3), w, spec.dropout, mix(spec.seed, 1), rng)?,
            branch("col", (3, 1), w, spec.dropout, mix(spec.seed, 2), rng)?,
        ])),
        Box::new(Residual::new(Box::new(Conv2d::new(
            "residual.conv",
            merged,
            merged,
            (3, 3),
            1,
            rng,
        )?))),
        Box::new(Relu::new()),
        Box::new(Conv2d::new("grouped_row.conv", merged, merged, (1, 3), 2, rng)?),
        Box::new(Relu::new()),
        Box::new(Conv2d::new("grouped_col.conv", merged, merged, (3, 1), 2, rng)?),
        Box::new(Relu::new()),
        Box::new(Flatten::new()),
    ];
    let mut width = merged * e * e;
    for (i, &h) in spec.hidden.iter().enumerate() {
        layers.push(Box::new(Dense::new(&format!("head{i}"), width, h, rng)));
        layers.push(Box::new(Relu::new()));
        layers.push(Box::new(Dropout::new(spec.dropout, mix(spec.seed, 10 + i as u64))?));
        width = h;
    }
    layers.push(Box::new(Dense::new("logits", width, spec.num_classes, rng)));
    Ok(Sequential::new(layers))
}

fn mlp_layers(spec: &ArchSpec, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    let mut layers: Vec<Box<dyn Layer>> = vec![Box::new(Flatten::new())];
    let mut width = 2 * spec.elements * spec.elements;
    for (i, &h) in spec.hidden.iter().enumerate() {
        layers.push(Box::new(Dense::new(&format!("fc{i}"), width, h, rng)));
        layers.push(Box::new(BatchNorm::new(&format!("bn{i}"), h)));
        layers.push(Box::new(Relu::new()));
        layers.push(Box::new(Dropout::new(spec.dropout, mix(spec.seed, 10 + i as u64))?));
        width = h;
    }
    layers.push(Box::new(Dense::new("logits", width, spec.num_classes, rng)));
    Ok(Sequential::new(layers))
}

//! Differentiable layers over NCHW activations (N×F for dense layers).
//!
//! Every layer caches what its backward pass needs during `forward`;
//! parameter gradients accumulate until cleared.

use moe_core::channel::mix;
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{split_ncs, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and fresh dropout masks; running statistics updated.
    Train,
    /// Training arithmetic with every discrete choice (dropout masks, ReLU
    /// gates, pooling winners) taken from the last `Train` pass, and no
    /// state updates. The forward map is then smooth, as finite differences
    /// require.
    Replay,
    /// Running statistics, no dropout.
    Infer,
}

/// One parameter tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// False for running statistics, which are state rather than weights.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>, trainable: bool) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            trainable,
        }
    }

    fn he_normal(name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        let value = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(name, shape, value, true)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Gradient with respect to the input of the last `forward`; parameter
    /// gradients are accumulated.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;

    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    /// Re-seeds any internal randomness.
    fn reseed(&mut self, _seed: u64) {}
}

fn missing(layer: &'static str) -> Error {
    Error::BackwardBeforeForward(layer)
}

fn dims4(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!("expected N×C×H×W, got {shape:?}"))),
    }
}

fn expect_shape(grad: &Tensor, shape: &[usize], layer: &str) -> Result<()> {
    if grad.shape() != shape {
        return Err(Error::Shape(format!(
            "{layer} gradient {:?} does not match output {shape:?}",
            grad.shape()
        )));
    }
    Ok(())
}

/// Stride-1 convolution with zero "same" padding and optional channel
/// groups.
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    groups: usize,
    /// `(O, C/groups, kh, kw)`
    weight: Param,
    bias: Param,
    cache: Option<ConvCache>,
}

struct ConvCache {
    shape: [usize; 4],
    /// im2col matrix per group, `(N·H·W) × (C/groups·kh·kw)`.
    cols: Vec<Array2<f64>>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{in_channels}→{out_channels} channels do not split into {groups} groups"
            )));
        }
        if kernel.0.is_multiple_of(2) || kernel.1.is_multiple_of(2) {
            return Err(Error::Config(format!("same padding needs odd kernels, got {kernel:?}")));
        }
        let cg = in_channels / groups;
        let fan_in = cg * kernel.0 * kernel.1;
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            groups,
            weight: Param::he_normal(
                format!("{name}.weight"),
                vec![out_channels, cg, kernel.0, kernel.1],
                fan_in,
                rng,
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels], true),
            cache: None,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x.shape())?;
        if c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let (kh, kw) = self.kernel;
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let cg = c / self.groups;
        let og = self.out_channels / self.groups;
        let k = self.patch_len();
        let rows = n * h * w;
        let xd = x.data();
        let wmat = ArrayView2::from_shape((self.out_channels, k), &self.weight.value).expect("weight shape");
        let mut y = vec![0.0; n * self.out_channels * h * w];
        let mut all_cols = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let mut cols = Array2::<f64>::zeros((rows, k));
            for ni in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let row = (ni * h + yy) * w + xx;
                        let mut out = cols.row_mut(row);
                        for ci in 0..cg {
                            let plane = (ni * c + g * cg + ci) * h * w;
                            for ky in 0..kh {
                                let sy = yy as isize + ky as isize - ph;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let sx = xx as isize + kx as isize - pw;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    out[(ci * kh + ky) * kw + kx] = xd[plane + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                }
            }
            let wg = wmat.slice(s![g * og..(g + 1) * og, ..]);
            let out_g = cols.dot(&wg.t());
            for ni in 0..n {
                for o in 0..og {
                    let oc = g * og + o;
                    let b = self.bias.value[oc];
                    let base = (ni * self.out_channels + oc) * h * w;
                    for p in 0..h * w {
                        y[base + p] = out_g[[ni * h * w + p, o]] + b;
                    }
                }
            }
            all_cols.push(cols);
        }
        self.cache = Some(ConvCache {
            shape: [n, c, h, w],
            cols: all_cols,
        });
        Tensor::new(vec![n, self.out_channels, h, w], y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing("conv2d"))?;
        let [n, c, h, w] = cache.shape;
        expect_shape(grad, &[n, self.out_channels, h, w], "conv2d")?;
        let (kh, kw) = self.kernel;
        let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
        let cg = c / self.groups;
        let og = self.out_channels / self.groups;
        let k = self.patch_len();
        let rows = n * h * w;
        let gd = grad.data();
        let mut dx = vec![0.0; n * c * h * w];
        for g in 0..self.groups {
            let mut dy = Array2::<f64>::zeros((rows, og));
            for ni in 0..n {
                for o in 0..og {
                    let oc = g * og + o;
                    let base = (ni * self.out_channels + oc) * h * w;
                    let mut db = 0.0;
                    for p in 0..h * w {
                        let v = gd[base + p];
                        dy[[ni * h * w + p, o]] = v;
                        db += v;
                    }
                    self.bias.grad[oc] += db;
                }
            }
            let dw = dy.t().dot(&cache.cols[g]);
            let wgrad = &mut self.weight.grad[g * og * k..(g + 1) * og * k];
            wgrad.iter_mut().zip(dw.iter()).for_each(|(a, b)| *a += b);
            let wg = ArrayView2::from_shape((og, k), &self.weight.value[g * og * k..(g + 1) * og * k])
                .expect("weight shape");
            let dcols = dy.dot(&wg);
            for ni in 0..n {
                for yy in 0..h {
                    for xx in 0..w {
                        let row = dcols.row((ni * h + yy) * w + xx);
                        for ci in 0..cg {
                            let plane = (ni * c + g * cg + ci) * h * w;
                            for ky in 0..kh {
                                let sy = yy as isize + ky as isize - ph;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let sx = xx as isize + kx as isize - pw;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    dx[plane + sy as usize * w + sx as usize] += row[(ci * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, c, h, w], dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Fully connected layer, `y = x·Wᵀ + b`.
pub struct Dense {
    inputs: usize,
    outputs: usize,
    /// `(outputs, inputs)`
    weight: Param,
    bias: Param,
    cache: Option<Array2<f64>>,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::he_normal(format!("{name}.weight"), vec![outputs, inputs], inputs, rng),
            bias: Param::new(format!("{name}.bias"), vec![outputs], vec![0.0; outputs], true),
            cache: None,
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, f] = *x.shape() else {
            return Err(Error::Shape(format!("dense expects N×F, got {:?}", x.shape())));
        };
        if f != self.inputs {
            return Err(Error::Shape(format!("dense expects {} features, got {f}", self.inputs)));
        }
        let xm = Array2::from_shape_vec((n, f), x.data().to_vec()).expect("checked shape");
        let wm = ArrayView2::from_shape((self.outputs, self.inputs), &self.weight.value).expect("weight shape");
        let mut y = xm.dot(&wm.t());
        for mut row in y.rows_mut() {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        self.cache = Some(xm);
        Tensor::new(vec![n, self.outputs], y.into_raw_vec_and_offset().0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or_else(|| missing("dense"))?;
        let n = x.nrows();
        expect_shape(grad, &[n, self.outputs], "dense")?;
        let dy = ArrayView2::from_shape((n, self.outputs), grad.data()).expect("checked shape");
        let dw = dy.t().dot(x);
        self.weight.grad.iter_mut().zip(dw.iter()).for_each(|(a, b)| *a += b);
        for row in dy.rows() {
            self.bias.grad.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let wm = ArrayView2::from_shape((self.outputs, self.inputs), &self.weight.value).expect("weight shape");
        let dx = dy.dot(&wm);
        Tensor::new(vec![n, self.inputs], dx.into_raw_vec_and_offset().0)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Per-channel batch normalization over N×C×… activations. Running
/// statistics track the biased batch variance.
pub struct BatchNorm {
    channels: usize,
    gamma: Param,
    beta: Param,
    running_mean: Param,
    running_var: Param,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache>,
}

struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels], true),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels], true),
            running_mean: Param::new(format!("{name}.running_mean"), vec![channels], vec![0.0; channels], false),
            running_var: Param::new(format!("{name}.running_var"), vec![channels], vec![1.0; channels], false),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
            cache: None,
        }
    }

    /// Per-channel mean and biased variance of a batch.
    pub fn batch_statistics(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, c, sp) = split_ncs(x.shape())?;
        let d = x.data();
        let count = (n * sp) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let values = (0..n).flat_map(|i| d[(i * c + ch) * sp..(i * c + ch + 1) * sp].iter());
            mean[ch] = values.clone().sum::<f64>() / count;
            var[ch] = values.map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / count;
        }
        Ok((mean, var))
    }

    pub fn set_running_statistics(&mut self, mean: &[f64], var: &[f64]) {
        self.running_mean.value.copy_from_slice(mean);
        self.running_var.value.copy_from_slice(var);
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, sp) = split_ncs(x.shape())?;
        if c != self.channels {
            return Err(Error::Shape(format!("batch norm expects {} channels, got {c}", self.channels)));
        }
        let batch_stats = mode != Mode::Infer;
        let (mean, var) = if batch_stats {
            let (mean, var) = Self::batch_statistics(x)?;
            if mode == Mode::Train {
                let m = self.momentum;
                for ch in 0..c {
                    self.running_mean.value[ch] = (1.0 - m) * self.running_mean.value[ch] + m * mean[ch];
                    self.running_var.value[ch] = (1.0 - m) * self.running_var.value[ch] + m * var[ch];
                }
            }
            (mean, var)
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let d = x.data();
        let mut xhat = vec![0.0; d.len()];
        let mut y = vec![0.0; d.len()];
        for i in 0..n {
            for ch in 0..c {
                for p in 0..sp {
                    let idx = (i * c + ch) * sp + p;
                    xhat[idx] = (d[idx] - mean[ch]) * inv_std[ch];
                    y[idx] = self.gamma.value[ch] * xhat[idx] + self.beta.value[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            batch_stats,
        });
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing("batch norm"))?;
        expect_shape(grad, &cache.shape, "batch norm")?;
        let (n, c, sp) = split_ncs(&cache.shape)?;
        let g = grad.data();
        let count = (n * sp) as f64;
        let mut dx = vec![0.0; g.len()];
        for ch in 0..c {
            let idx = |i: usize, p: usize| (i * c + ch) * sp + p;
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for i in 0..n {
                for p in 0..sp {
                    let k = idx(i, p);
                    sum_dy += g[k];
                    sum_dy_xhat += g[k] * cache.xhat[k];
                }
            }
            self.beta.grad[ch] += sum_dy;
            self.gamma.grad[ch] += sum_dy_xhat;
            let gi = self.gamma.value[ch] * cache.inv_std[ch];
            for i in 0..n {
                for p in 0..sp {
                    let k = idx(i, p);
                    dx[k] = if cache.batch_stats {
                        gi * (g[k] - sum_dy / count - cache.xhat[k] * sum_dy_xhat / count)
                    } else {
                        gi * g[k]
                    };
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Default)]
pub struct Relu {
    gate: Option<Vec<bool>>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let d = x.data();
        let replay = mode == Mode::Replay && self.gate.as_ref().is_some_and(|g| g.len() == d.len());
        if !replay {
            self.gate = Some(d.iter().map(|&v| v > 0.0).collect());
        }
        let gate = self.gate.as_ref().expect("set above");
        self.shape = x.shape().to_vec();
        let y = d.iter().zip(gate).map(|(&v, &on)| if on { v } else { 0.0 }).collect();
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let gate = self.gate.as_ref().ok_or_else(|| missing("relu"))?;
        expect_shape(grad, &self.shape, "relu")?;
        let dx = grad.data().iter().zip(gate).map(|(&g, &on)| if on { g } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), dx)
    }
}

/// 2×2 max pooling, stride 1, padded after so the plane size is kept.
#[derive(Default)]
pub struct MaxPool2d {
    /// Input index of each output's maximum.
    winners: Option<Vec<usize>>,
    shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x.shape())?;
        let d = x.data();
        let replay = mode == Mode::Replay && self.winners.as_ref().is_some_and(|v| v.len() == d.len());
        if !replay {
            let mut winners = Vec::with_capacity(d.len());
            for plane in 0..n * c {
                let base = plane * h * w;
                for i in 0..h {
                    for j in 0..w {
                        let mut best = base + i * w + j;
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let (ii, jj) = (i + di, j + dj);
                            if ii < h && jj < w && d[base + ii * w + jj] > d[best] {
                                best = base + ii * w + jj;
                            }
                        }
                        winners.push(best);
                    }
                }
            }
            self.winners = Some(winners);
        }
        self.shape = x.shape().to_vec();
        let y = self.winners.as_ref().expect("set above").iter().map(|&k| d[k]).collect();
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let winners = self.winners.as_ref().ok_or_else(|| missing("max pool"))?;
        expect_shape(grad, &self.shape, "max pool")?;
        let mut dx = vec![0.0; grad.len()];
        for (&k, &g) in winners.iter().zip(grad.data()) {
            dx[k] += g;
        }
        Tensor::new(self.shape.clone(), dx)
    }
}

/// Inverted dropout: kept units are scaled by `1/(1−p)` during training.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
    /// Per-unit multiplier of the last training pass.
    mask: Option<Vec<f64>>,
    shape: Vec<usize>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "dropout probability",
                value: p.to_string(),
            });
        }
        Ok(Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            shape: Vec::new(),
        })
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.shape = x.shape().to_vec();
        let d = x.data();
        match mode {
            Mode::Infer => {
                self.mask = Some(vec![1.0; d.len()]);
                return Ok(x.clone());
            }
            Mode::Replay if self.mask.as_ref().is_some_and(|m| m.len() == d.len()) => {}
            _ => {
                let keep = 1.0 / (1.0 - self.p);
                let p = self.p;
                let rng = &mut self.rng;
                self.mask = Some(
                    (0..d.len())
                        .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect(),
                );
            }
        }
        let mask = self.mask.as_ref().expect("set above");
        Tensor::new(x.shape().to_vec(), d.iter().zip(mask).map(|(v, m)| v * m).collect())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(|| missing("dropout"))?;
        expect_shape(grad, &self.shape, "dropout")?;
        Tensor::new(self.shape.clone(), grad.data().iter().zip(mask).map(|(g, m)| g * m).collect())
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// N×… → N×F.
#[derive(Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let n = x.batch();
        self.shape = Some(x.shape().to_vec());
        x.clone().reshape(vec![n, x.len() / n.max(1)])
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.shape.clone().ok_or_else(|| missing("flatten"))?;
        grad.clone().reshape(shape)
    }
}

pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }

    fn reseed(&mut self, seed: u64) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.reseed(mix(seed, i as u64));
        }
    }
}

/// Branches applied to the same input, concatenated along channels.
pub struct Parallel {
    branches: Vec<Box<dyn Layer>>,
    /// Channels contributed by each branch in the last forward.
    split: Vec<usize>,
    input_shape: Vec<usize>,
}

impl Parallel {
    pub fn new(branches: Vec<Box<dyn Layer>>) -> Self {
        Self {
            branches,
            split: Vec::new(),
            input_shape: Vec::new(),
        }
    }
}

impl Layer for Parallel {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, mode))
            .collect::<Result<Vec<_>>>()?;
        let first = outs.first().ok_or(Error::EmptyInput("parallel branches"))?;
        let (n, _, sp) = split_ncs(first.shape())?;
        let rest = first.shape()[2..].to_vec();
        for o in &outs {
            if o.batch() != n || o.shape()[2..] != rest[..] {
                return Err(Error::Shape(format!(
                    "branch outputs {:?} and {:?} cannot be concatenated",
                    first.shape(),
                    o.shape()
                )));
            }
        }
        self.split = outs.iter().map(|o| o.shape()[1]).collect();
        self.input_shape = x.shape().to_vec();
        let total: usize = self.split.iter().sum();
        let mut y = Vec::with_capacity(n * total * sp);
        for i in 0..n {
            for o in &outs {
                let c = o.shape()[1];
                y.extend_from_slice(&o.data()[i * c * sp..(i + 1) * c * sp]);
            }
        }
        let mut shape = vec![n, total];
        shape.extend(rest);
        Tensor::new(shape, y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        if self.split.is_empty() {
            return Err(missing("parallel"));
        }
        let (n, total, sp) = split_ncs(grad.shape())?;
        if total != self.split.iter().sum::<usize>() {
            return Err(Error::Shape(format!("parallel gradient {:?}", grad.shape())));
        }
        let g = grad.data();
        let mut dx: Option<Tensor> = None;
        let mut offset = 0;
        for (branch, &c) in self.branches.iter_mut().zip(&self.split) {
            let mut part = Vec::with_capacity(n * c * sp);
            for i in 0..n {
                let start = (i * total + offset) * sp;
                part.extend_from_slice(&g[start..start + c * sp]);
            }
            let mut shape = grad.shape().to_vec();
            shape[1] = c;
            let d = branch.backward(&Tensor::new(shape, part)?)?;
            match dx.as_mut() {
                None => dx = Some(d),
                Some(acc) => acc.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += b),
            }
            offset += c;
        }
        dx.ok_or(Error::EmptyInput("parallel branches"))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.iter_mut().for_each(|l| l.visit_mut(f));
    }

    fn reseed(&mut self, seed: u64) {
        for (i, l) in self.branches.iter_mut().enumerate() {
            l.reseed(mix(seed, i as u64));
        }
    }
}

/// `y = x + f(x)`.
pub struct Residual {
    inner: Box<dyn Layer>,
}

impl Residual {
    pub fn new(inner: Box<dyn Layer>) -> Self {
        Self { inner }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = self.inner.forward(x, mode)?;
        if y.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "residual branch maps {:?} to {:?}",
                x.shape(),
                y.shape()
            )));
        }
        y.data_mut().iter_mut().zip(x.data()).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut dx = self.inner.backward(grad)?;
        dx.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b);
        Ok(dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.inner.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.inner.visit_mut(f);
    }

    fn reseed(&mut self, seed: u64) {
        self.inner.reseed(seed);
    }
}

//! Adam optimization and the mini-batch training loop.

use log::info;
use moe_core::channel::mix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::{argmax, batch_loss, LossSpec};
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update of every trainable parameter from its
    /// accumulated gradient.
    pub fn step(&self, net: &mut Network) {
        net.steps += 1;
        let t = net.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let Adam { lr, beta1, beta2, eps } = *self;
        net.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Features laid out record by record as `2×E×E` channel-first values,
/// with one-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    elements: usize,
    features: Vec<f64>,
    classes: Vec<u8>,
}

impl LabeledSet {
    pub fn new(elements: usize, features: Vec<f64>, classes: Vec<u8>) -> Result<Self> {
        let per = 2 * elements * elements;
        if per == 0 || features.len() != per * classes.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} records of {per}",
                features.len(),
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c == 0) {
            return Err(Error::OutOfRange {
                what: "class",
                value: c.to_string(),
            });
        }
        Ok(Self {
            elements,
            features,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn record(&self, i: usize) -> &[f64] {
        let per = 2 * self.elements * self.elements;
        &self.features[i * per..(i + 1) * per]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let e = self.elements;
        let mut data = Vec::with_capacity(indices.len() * 2 * e * e);
        for &i in indices {
            data.extend_from_slice(self.record(i));
        }
        let x = Tensor::new(vec![indices.len(), 2, e, e], data)?;
        Ok((x, indices.iter().map(|&i| self.classes[i]).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            loss: LossSpec::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// One-based.
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training-mode forward passes during the epoch.
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Mini-batch Adam training. Shuffling and dropout are driven by
/// `config.seed`, so equal inputs give equal parameters.
pub fn train(
    net: &mut Network,
    data: &LabeledSet,
    validation: Option<&LabeledSet>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size 0".into()));
    }
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {}", config.lr)));
    }
    let classes = net.spec().num_classes;
    if let Some(&c) = data.classes().iter().find(|&&c| c as usize > classes) {
        return Err(Error::OutOfRange {
            what: "class",
            value: format!("{c} for a {classes}-class network"),
        });
    }
    net.reseed(mix(config.seed, 1));
    let adam = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 100 + epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = data.batch(chunk)?;
            net.zero_grad();
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = batch_loss(&logits, &labels, &config.loss)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(i, &c)| argmax(logits.row(i)) + 1 == c as usize)
                .count();
            net.backward(&grad)?;
            adam.step(net);
        }
        let validation_accuracy = validation.map(|v| accuracy(net, v)).transpose()?;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            validation_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.4} train {:.4} validation {:?}",
            stats.loss, stats.train_accuracy, stats.validation_accuracy
        );
        report.epochs.push(stats);
    }
    Ok(report)
}

const EVAL_BATCH: usize = 256;

/// Inference-mode one-based class predictions.
pub fn predict_classes(net: &mut Network, data: &LabeledSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        out.extend(net.predict(&x)?.into_iter().map(|p| p.class));
    }
    Ok(out)
}

pub fn accuracy(net: &mut Network, data: &LabeledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let pred = predict_classes(net, data)?;
    let hits = pred.iter().zip(data.classes()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / data.len() as f64)
}

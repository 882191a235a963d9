//! Softmax cross-entropy and the order-gap weighted variant.

use moe_core::label::loss_orders;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_K2: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    StandardCe,
    WeightedCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    kind: LossKind,
    k1: f64,
    k2: f64,
}

impl LossSpec {
    pub fn standard() -> Self {
        Self {
            kind: LossKind::StandardCe,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
        }
    }

    /// Requires `k2 > k1 > 1`.
    pub fn weighted(k1: f64, k2: f64) -> Result<Self> {
        if !(k1 > 1.0 && k2 > k1 && k2.is_finite()) {
            return Err(Error::Config(format!("weighted loss needs K2 > K1 > 1, got K1={k1} K2={k2}")));
        }
        Ok(Self {
            kind: LossKind::WeightedCe,
            k1,
            k2,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_index(logits: &[f64], index: usize) -> Result<()> {
    if index >= logits.len() {
        return Err(Error::OutOfRange {
            what: "class index",
            value: format!("{index} of {}", logits.len()),
        });
    }
    Ok(())
}

/// `−log softmax(z)[class]` for a zero-based class index, with gradient
/// `softmax(z) − onehot`.
pub fn loss_standard_ce(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    check_index(logits, class)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[class] -= 1.0;
    Ok((lse - logits[class], grad))
}

/// `w₁ = exp(K₁·(n_M − n̂_M))` and `w₂ = exp(K₂·(n_P − n̂_P))`, with the
/// estimates decoded from the argmax of `logits`.
pub fn order_weights(logits: &[f64], class: u8, spec: &LossSpec) -> Result<(f64, f64)> {
    let (m, p) = loss_orders(class)?;
    let (m_hat, p_hat) = loss_orders(argmax(logits) as u8 + 1)?;
    let w1 = (spec.k1 * (f64::from(m) - f64::from(m_hat))).exp();
    let w2 = (spec.k2 * (f64::from(p) - f64::from(p_hat))).exp();
    Ok((w1, w2))
}

/// `½·w₁·CE + ½·w₂·CE` for a one-based class; the weights are constants
/// of the gradient.
pub fn loss_weighted_ce(logits: &[f64], class: u8, spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    if class == 0 {
        return Err(Error::OutOfRange {
            what: "class",
            value: "0".into(),
        });
    }
    let (ce, mut grad) = loss_standard_ce(logits, class as usize - 1)?;
    let (w1, w2) = order_weights(logits, class, spec)?;
    let scale = 0.5 * (w1 + w2);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((scale * ce, grad))
}

/// Mean loss over a batch of logits and its gradient.
pub fn batch_loss(logits: &Tensor, classes: &[u8], spec: &LossSpec) -> Result<(f64, Tensor)> {
    let n = logits.batch();
    if logits.shape().len() != 2 || classes.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for logits {:?}",
            classes.len(),
            logits.shape()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &c) in classes.iter().enumerate() {
        let (l, g) = match spec.kind {
            LossKind::StandardCe => {
                if c == 0 {
                    return Err(Error::OutOfRange {
                        what: "class",
                        value: "0".into(),
                    });
                }
                loss_standard_ce(logits.row(i), c as usize - 1)?
            }
            LossKind::WeightedCe => loss_weighted_ce(logits.row(i), c, spec)?,
        };
        total += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

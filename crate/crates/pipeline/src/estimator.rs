//! Model-order sources for the pipeline: ground truth, the classical MDL
//! criterion, or a trained classifier.

use moe_core::covariance::{to_feature, CovarianceMatrix};
use moe_core::label::{decode_label, encode_label, ModelOrderLabel, NUM_CLASSES, OVERLOADED_CLASS};
use moe_core::moe::{estimate_order, Criterion};
use moe_neural::{Network, Tensor};

use crate::error::{Error, Result};

/// Largest path count with a regular class.
const MAX_REGULAR_PATHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictedOrder {
    Regular { class18: u8, n_s: u8, n_m: u8, n_p: u8 },
    Overloaded,
}

impl PredictedOrder {
    pub fn from_class(class: u8) -> Result<Self> {
        if class == OVERLOADED_CLASS {
            return Ok(PredictedOrder::Overloaded);
        }
        let (n_s, n_m, n_p) = decode_label(class)?;
        Ok(PredictedOrder::Regular {
            class18: class,
            n_s,
            n_m,
            n_p,
        })
    }

    /// Class id in 1..=19.
    pub fn class(&self) -> u8 {
        match *self {
            PredictedOrder::Regular { class18, .. } => class18,
            PredictedOrder::Overloaded => OVERLOADED_CLASS,
        }
    }

    pub fn n_m(&self) -> Option<u8> {
        match *self {
            PredictedOrder::Regular { n_m, .. } => Some(n_m),
            PredictedOrder::Overloaded => None,
        }
    }

    /// Treats `n_m` detected paths as that many independent sources, the
    /// only reading available to an estimator that ignores coherence.
    /// Zero is raised to one; more than five paths is overloaded.
    pub fn independent(n_m: usize) -> Result<Self> {
        if n_m > MAX_REGULAR_PATHS {
            return Ok(PredictedOrder::Overloaded);
        }
        let m = n_m.max(1) as u8;
        Self::from_class(encode_label(m, m, 1)?)
    }
}

pub enum ModelOrderEstimator {
    /// Reads the ground truth passed alongside the covariance.
    Oracle,
    Classical(Criterion),
    Network(Box<Network>),
}

impl ModelOrderEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            ModelOrderEstimator::Oracle => "oracle",
            ModelOrderEstimator::Classical(Criterion::Mdl) => "mdl",
            ModelOrderEstimator::Classical(Criterion::Aic) => "aic",
            ModelOrderEstimator::Network(_) => "model",
        }
    }

    /// `cov` is one block's sample covariance over `cov.snapshots()` samples.
    pub fn estimate(&mut self, cov: &CovarianceMatrix, truth: Option<&ModelOrderLabel>) -> Result<PredictedOrder> {
        match self {
            ModelOrderEstimator::Oracle => {
                let t = truth.ok_or_else(|| Error::Usage("the oracle estimator needs the true label".into()))?;
                PredictedOrder::from_class(t.class18)
            }
            ModelOrderEstimator::Classical(c) => {
                let d = estimate_order(cov, cov.snapshots(), *c)?.order;
                PredictedOrder::independent(d)
            }
            ModelOrderEstimator::Network(net) => {
                let classes = predict_network(net, &[cov])?;
                PredictedOrder::from_class(classes[0])
            }
        }
    }
}

/// One-based classes predicted for each covariance.
pub fn predict_network(net: &mut Network, covs: &[&CovarianceMatrix]) -> Result<Vec<u8>> {
    let [_, e, _] = net.input_shape();
    let mut data = Vec::with_capacity(covs.len() * 2 * e * e);
    for cov in covs {
        if cov.dim() != e {
            return Err(Error::Usage(format!(
                "model expects {e} elements, covariance has {}",
                cov.dim()
            )));
        }
        data.extend(to_feature(cov).channels_first());
    }
    let x = Tensor::new(vec![covs.len(), 2, e, e], data)?;
    let classes: Vec<u8> = net.predict(&x)?.into_iter().map(|p| p.class).collect();
    if let Some(&c) = classes.iter().find(|&&c| c as usize > NUM_CLASSES as usize + 1) {
        return Err(Error::Usage(format!("model produced class {c}")));
    }
    Ok(classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_reading_of_path_counts() {
        assert_eq!(PredictedOrder::independent(0).unwrap().class(), 1);
        for m in 1..=5u8 {
            let p = PredictedOrder::independent(m as usize).unwrap();
            let c = encode_label(m, m, 1).unwrap();
            assert_eq!(p, PredictedOrder::from_class(c).unwrap());
            assert_eq!(p.n_m(), Some(m));
        }
        assert_eq!(PredictedOrder::independent(6).unwrap(), PredictedOrder::Overloaded);
        assert_eq!(PredictedOrder::Overloaded.class(), 19);
        assert!(PredictedOrder::from_class(0).is_err());
    }
}

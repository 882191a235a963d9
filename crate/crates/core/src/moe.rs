//! Information-theoretic model-order estimators (AIC, MDL).

use log::warn;

use crate::covariance::CovarianceMatrix;
use crate::eigen::hermitian_eigen;
use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-300;

/// Closeness of the trailing eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closeness {
    pub value: f64,
    /// Set when a noise eigenvalue was clamped to the positive floor.
    pub clamped: bool,
}

/// `L(d) = −N·(E−d)·log(g/a)`, with `g` and `a` the geometric and arithmetic
/// means of the `E − d` smallest of the descending `eigenvalues`.
pub fn closeness_statistic(eigenvalues: &[f64], d: usize, n: usize) -> Result<Closeness> {
    let e = eigenvalues.len();
    if d >= e {
        return Err(Error::ModelOrderTooLarge { order: d, elements: e });
    }
    if n < 2 {
        return Err(Error::OutOfRange {
            what: "snapshot count",
            value: n.to_string(),
        });
    }
    let tail = &eigenvalues[d..];
    let mut clamped = false;
    let mut log_sum = 0.0;
    let mut sum = 0.0;
    for &l in tail {
        let v = if l > EIGEN_FLOOR {
            l
        } else {
            clamped = true;
            EIGEN_FLOOR
        };
        log_sum += v.ln();
        sum += v;
    }
    let m = tail.len() as f64;
    let log_ratio = log_sum / m - (sum / m).ln();
    // AM ≥ GM; rounding can push the ratio a hair above one
    let value = (-(n as f64) * m * log_ratio).max(0.0);
    Ok(Closeness { value, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Mdl,
}

impl Criterion {
    fn penalty(self, d: usize, e: usize, n: usize) -> f64 {
        let free = (d * (2 * e - d)) as f64;
        match self {
            Criterion::Aic => free,
            Criterion::Mdl => 0.5 * free * (n as f64).ln(),
        }
    }
}

/// Scores of every candidate order and the minimizing one.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    pub order: usize,
    pub scores: Vec<f64>,
    pub clamped: bool,
}

pub fn estimate_order_from_eigenvalues(
    eigenvalues: &[f64],
    n: usize,
    criterion: Criterion,
) -> Result<OrderEstimate> {
    let e = eigenvalues.len();
    if e == 0 {
        return Err(Error::EmptyInput("eigenvalues"));
    }
    let mut scores = Vec::with_capacity(e);
    let mut clamped = false;
    for d in 0..e {
        let l = closeness_statistic(eigenvalues, d, n)?;
        clamped |= l.clamped;
        scores.push(l.value + criterion.penalty(d, e, n));
    }
    if clamped {
        warn!("non-positive noise eigenvalue clamped during order estimation");
    }
    let order = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (d, &s)| if s < best.1 { (d, s) } else { best })
        .0;
    Ok(OrderEstimate { order, scores, clamped })
}

pub fn estimate_order(cov: &CovarianceMatrix, n: usize, criterion: Criterion) -> Result<OrderEstimate> {
    let eig = hermitian_eigen(cov)?;
    estimate_order_from_eigenvalues(eig.eigenvalues().as_slice().expect("contiguous"), n, criterion)
}

pub fn aic_estimate(cov: &CovarianceMatrix, n: usize) -> Result<usize> {
    Ok(estimate_order(cov, n, Criterion::Aic)?.order)
}

pub fn mdl_estimate(cov: &CovarianceMatrix, n: usize) -> Result<usize> {
    Ok(estimate_order(cov, n, Criterion::Mdl)?.order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_scenario, synthesize_block, ScenarioConfig};
    use crate::covariance::estimate_covariance;
    use crate::manifold::ArrayGeometry;
    use ndarray::Array2;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_eigenvalues_have_zero_closeness() {
        let ev = [2.5; 6];
        for d in 0..6 {
            let l = closeness_statistic(&ev, d, 200).unwrap();
            assert!(l.value.abs() < 1e-9);
            assert!(!l.clamped);
        }
        let ev = [9.0, 4.0, 3.0, 2.0, 1.5, 1.0];
        assert_eq!(closeness_statistic(&ev, 5, 200).unwrap().value, 0.0);
    }

    #[test]
    fn worked_example() {
        let ev = [4.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert!(closeness_statistic(&ev, 1, 200).unwrap().value.abs() < 1e-9);
        // d = 0: a = 9/6, log g = ln 4 / 6
        let expect = -200.0 * 6.0 * (4f64.ln() / 6.0 - 1.5f64.ln());
        let got = closeness_statistic(&ev, 0, 200).unwrap().value;
        assert!(got > 0.0);
        assert!((got - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn bad_arguments() {
        let ev = [1.0, 1.0];
        assert!(matches!(
            closeness_statistic(&ev, 2, 200),
            Err(Error::ModelOrderTooLarge { .. })
        ));
        assert!(closeness_statistic(&ev, 0, 1).is_err());
        let l = closeness_statistic(&[1.0, 0.0, -1e-18], 0, 10).unwrap();
        assert!(l.clamped && l.value.is_finite());
    }

    #[test]
    fn pure_noise_gives_zero() {
        let cov = CovarianceMatrix::new(Array2::<Complex64>::eye(6), 200, 1).unwrap();
        assert_eq!(mdl_estimate(&cov, 200).unwrap(), 0);
        assert_eq!(aic_estimate(&cov, 200).unwrap(), 0);
    }

    #[test]
    fn independent_sources_are_counted() {
        let geom = ArrayGeometry::default_uca();
        let cfg = ScenarioConfig {
            snr_range: (10.0, 10.0),
            ..ScenarioConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut hits = 0;
        for _ in 0..100 {
            let s = sample_scenario(&mut rng, &cfg, Some(3)).unwrap();
            let cov = estimate_covariance(&synthesize_block(&s, &geom, 0, &mut rng).unwrap()).unwrap();
            hits += (mdl_estimate(&cov, 200).unwrap() == 2) as usize;
        }
        assert!(hits >= 90, "{hits}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mdl_is_scale_invariant(seed in any::<u64>(), scale in 1e-6f64..1e6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((6, 40), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let cov = CovarianceMatrix::from_samples(&x).unwrap();
            let a = estimate_order(&cov, 40, Criterion::Mdl).unwrap().order;
            let b = estimate_order(&cov.scaled(scale), 40, Criterion::Mdl).unwrap().order;
            prop_assert_eq!(a, b);
            let aic = aic_estimate(&cov, 40).unwrap();
            prop_assert!(a < 6 && aic < 6);
        }

        #[test]
        fn closeness_positive_unless_tail_equal(tail in proptest::collection::vec(0.1f64..10.0, 2..6)) {
            let mut ev = tail.clone();
            ev.sort_by(|a, b| b.total_cmp(a));
            let l = closeness_statistic(&ev, 0, 100).unwrap().value;
            let equal = ev.iter().all(|v| (v - ev[0]).abs() < 1e-12);
            if equal { prop_assert!(l.abs() < 1e-9); } else { prop_assert!(l > 0.0); }
        }
    }
}

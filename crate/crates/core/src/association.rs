//! Spatial filtering toward estimated directions and grouping of the
//! recovered signals by source.

use std::fmt::Write as _;

use ndarray::Array1;
use num_complex::Complex64;

use crate::channel::Snapshot;
use crate::covariance::CovarianceMatrix;
use crate::eigen::hermitian_pinv;
use crate::error::{Error, Result};
use crate::label::encode_label;
use crate::manifold::DirectionPair;

pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const MAX_LAG: isize = 20;
const PINV_TOLERANCE: f64 = 1e-8;

/// `W = R⁺·a`.
pub fn spatial_filter_weights(cov: &CovarianceMatrix, steering: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    if steering.len() != cov.dim() {
        return Err(Error::InvalidInput(format!(
            "steering length {} does not match covariance size {}",
            steering.len(),
            cov.dim()
        )));
    }
    let pinv = hermitian_pinv(cov.entries(), PINV_TOLERANCE)?;
    Ok(pinv.dot(steering))
}

/// `ŝ(t) = Wᴴ·x(t)` for every sample of the snapshot.
pub fn extract_signal(weights: &Array1<Complex64>, snapshot: &Snapshot) -> Result<Vec<Complex64>> {
    let x = snapshot.samples();
    if weights.len() != x.nrows() {
        return Err(Error::InvalidInput(format!(
            "weight length {} does not match {} elements",
            weights.len(),
            x.nrows()
        )));
    }
    let wh = weights.mapv(|z| z.conj());
    Ok(wh.dot(x).to_vec())
}

fn lag_coefficients(a: &[Complex64], b: &[Complex64]) -> Option<Vec<f64>> {
    let ea: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let eb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    let scale = (ea * eb).sqrt();
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let n = a.len().min(b.len()) as isize;
    Some(
        (-MAX_LAG..=MAX_LAG)
            .map(|lag| {
                let lo = 0.max(-lag);
                let hi = n.min(n - lag);
                let acc: Complex64 = (lo..hi)
                    .map(|t| a[t as usize] * b[(t + lag) as usize].conj())
                    .sum();
                (acc.norm() / scale).min(1.0)
            })
            .collect(),
    )
}

/// Peak normalized cross-correlation magnitude over lags `−20..=20`, and
/// whether it reaches `threshold`. Zero-energy inputs score 0.
pub fn correlated(s_i: &[Complex64], s_j: &[Complex64], threshold: f64) -> (bool, f64) {
    let c = lag_coefficients(s_i, s_j).map_or(0.0, |v| v.into_iter().fold(0.0, f64::max));
    (c >= threshold, c)
}

/// Like [`correlated`] over several segments per signal: per-lag
/// coefficients are averaged across segments before taking the peak.
pub fn correlated_segments(s_i: &[Vec<Complex64>], s_j: &[Vec<Complex64>], threshold: f64) -> (bool, f64) {
    let mut sum = vec![0.0; (2 * MAX_LAG + 1) as usize];
    let mut used = 0usize;
    for (a, b) in s_i.iter().zip(s_j) {
        if let Some(v) = lag_coefficients(a, b) {
            sum.iter_mut().zip(v).for_each(|(s, c)| *s += c);
            used += 1;
        }
    }
    if used == 0 {
        return (false, 0.0);
    }
    let c = sum.into_iter().fold(0.0, f64::max) / used as f64;
    (c >= threshold, c)
}

/// Pairwise decision used by the association loops.
pub trait Correlator {
    /// Whether signals `i` and `j` share a source, with the coefficient that
    /// decided it.
    fn correlate(&mut self, i: usize, j: usize) -> (bool, f64);
}

/// Decides from the extracted signals; each signal may carry several
/// segments (one per block).
pub struct SignalCorrelator<'a> {
    pub signals: &'a [Vec<Vec<Complex64>>],
    pub threshold: f64,
}

impl Correlator for SignalCorrelator<'_> {
    fn correlate(&mut self, i: usize, j: usize) -> (bool, f64) {
        correlated_segments(&self.signals[i], &self.signals[j], self.threshold)
    }
}

/// Ground-truth source identity per signal.
pub struct OracleCorrelator {
    pub sources: Vec<usize>,
}

impl Correlator for OracleCorrelator {
    fn correlate(&mut self, i: usize, j: usize) -> (bool, f64) {
        let same = self.sources[i] == self.sources[j];
        (same, if same { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Signal indices grouped by inferred source, each set in insertion order.
    pub partition: Vec<Vec<usize>>,
    pub correlation_count: usize,
    /// `(candidate, representative, coefficient)` per correlation call.
    pub coefficients: Vec<(usize, usize, f64)>,
}

impl AssociationResult {
    /// Set sizes, largest first.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.partition.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// Partition with every set sorted and sets ordered by first member.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        canonical_partition(&self.partition)
    }

    /// Text report: one line per cluster with member directions and the
    /// coefficients of the calls that admitted them.
    pub fn report(&self, directions: &[DirectionPair]) -> String {
        let mut out = format!("clusters: {}\ncorrelations: {}\n", self.partition.len(), self.correlation_count);
        for (k, set) in self.partition.iter().enumerate() {
            write!(out, "cluster {k}:").expect("string write");
            for &m in set {
                let dir = directions
                    .get(m)
                    .map(|d| format!("{:.2}/{:.2}", d.elevation().to_degrees(), d.azimuth().to_degrees()))
                    .unwrap_or_else(|| "-".into());
                // members placed without a call (the last set under
                // TakeRest) have no coefficient
                let coef = if set.first() == Some(&m) {
                    "rep".to_string()
                } else {
                    self.coefficients
                        .iter()
                        .find(|c| c.0 == m && c.1 == set[0])
                        .map_or_else(|| "-".into(), |c| format!("{:.3}", c.2))
                };
                write!(out, " [{m} el/az {dir} c {coef}]").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

pub fn canonical_partition(partition: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut p: Vec<Vec<usize>> = partition
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut s = s.clone();
            s.sort_unstable();
            s
        })
        .collect();
    p.sort();
    p
}

/// How the enhanced loop treats its final set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LastSet {
    /// Every set, including the last, admits members by correlation.
    #[default]
    Correlate,
    /// With only `n_S` sets available, the last one receives every remaining
    /// signal without further correlation.
    TakeRest,
}

/// Fills at most `max_sets` sets in turn. A set takes the first remaining
/// signal unconditionally, then every remaining signal its representative
/// correlates with, until it holds `cap` members.
fn fill_sets(
    n: usize,
    max_sets: usize,
    cap: usize,
    last: LastSet,
    correlator: &mut dyn Correlator,
) -> AssociationResult {
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut partition = Vec::new();
    let mut coefficients = Vec::new();
    for k in 0..max_sets {
        if remaining.is_empty() {
            break;
        }
        if k + 1 == max_sets && last == LastSet::TakeRest {
            partition.push(std::mem::take(&mut remaining));
            break;
        }
        let mut set: Vec<usize> = Vec::new();
        let mut keep = Vec::with_capacity(remaining.len());
        let mut full = false;
        for &j in &remaining {
            if full {
                keep.push(j);
                continue;
            }
            let admit = match set.first() {
                None => true,
                Some(&rep) => {
                    let (ok, c) = correlator.correlate(j, rep);
                    coefficients.push((j, rep, c));
                    ok
                }
            };
            if admit {
                set.push(j);
                full = set.len() == cap;
            } else {
                keep.push(j);
            }
        }
        remaining = keep;
        partition.push(set);
    }
    // signals no allocated set accepted stand alone
    partition.extend(remaining.into_iter().map(|j| vec![j]));
    AssociationResult {
        partition,
        correlation_count: coefficients.len(),
        coefficients,
    }
}

/// Greedy association over `n` signals: up to `n` sets, no size cap.
pub fn associate_greedy(n: usize, correlator: &mut dyn Correlator) -> AssociationResult {
    fill_sets(n, n, usize::MAX, LastSet::Correlate, correlator)
}

/// Association guided by the decoded label: `n_s` sets, each closed once it
/// holds `n_p` members.
pub fn associate_enhanced(
    n: usize,
    n_s: u8,
    n_m: u8,
    n_p: u8,
    correlator: &mut dyn Correlator,
) -> Result<AssociationResult> {
    associate_enhanced_with(n, n_s, n_m, n_p, LastSet::Correlate, correlator)
}

pub fn associate_enhanced_with(
    n: usize,
    n_s: u8,
    n_m: u8,
    n_p: u8,
    last: LastSet,
    correlator: &mut dyn Correlator,
) -> Result<AssociationResult> {
    encode_label(n_s, n_m, n_p).map_err(|_| {
        Error::LabelMismatch(format!("({n_s}, {n_m}, {n_p}) is not a valid label"))
    })?;
    if n != n_m as usize {
        return Err(Error::LabelMismatch(format!("{n} signals but n_M = {n_m}")));
    }
    Ok(fill_sets(n, n_s as usize, n_p as usize, last, correlator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_scenario, synthesize_block, ScenarioConfig};
    use crate::label::{decode_label, path_groups};
    use crate::manifold::{steering_matrix, ArrayGeometry};
    use crate::waveform::gen_source_symbols;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Source id per path for a class, in group order.
    fn class_sources(class: u8) -> Vec<usize> {
        path_groups(class)
            .unwrap()
            .iter()
            .enumerate()
            .flat_map(|(s, &g)| std::iter::repeat_n(s, g as usize))
            .collect()
    }

    /// Independent count of the enhanced loop: walk sets directly on the
    /// ordered source labels.
    fn brute_enhanced_count(order: &[usize], n_s: usize, n_p: usize, take_rest: bool) -> usize {
        let mut left: Vec<usize> = order.to_vec();
        let mut calls = 0;
        for k in 0..n_s {
            if left.is_empty() || (take_rest && k + 1 == n_s) {
                break;
            }
            let rep = left.remove(0);
            let mut size = 1;
            let mut i = 0;
            while i < left.len() && size < n_p {
                calls += 1;
                if left[i] == rep {
                    left.remove(i);
                    size += 1;
                } else {
                    i += 1;
                }
            }
        }
        calls
    }

    #[test]
    fn identity_covariance_passes_steering_through() {
        let cov = CovarianceMatrix::new(Array2::<Complex64>::eye(6), 200, 1).unwrap();
        let a = ArrayGeometry::default_uca().steer(&DirectionPair::from_degrees(40.0, 10.0).unwrap());
        let w = spatial_filter_weights(&cov, &a).unwrap();
        assert!((w - &a).iter().all(|z| z.norm() < 1e-12));
        let zero = CovarianceMatrix::new(Array2::zeros((6, 6)), 200, 1).unwrap();
        assert!(matches!(spatial_filter_weights(&zero, &a), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn filters_null_other_directions() {
        let g = ArrayGeometry::dense_uca();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let dirs: Vec<_> = (0..2)
                .map(|_| DirectionPair::new(rng.random_range(0.2..1.4), rng.random_range(0.0..std::f64::consts::TAU)).unwrap())
                .collect();
            let a = steering_matrix(&g, &dirs).unwrap();
            let r = a.dot(&a.t().mapv(|z| z.conj()));
            let cov = CovarianceMatrix::new(r, 200, 1).unwrap();
            let w: Vec<_> = (0..2).map(|k| spatial_filter_weights(&cov, &a.column(k).to_owned()).unwrap()).collect();
            for (i, wi) in w.iter().enumerate() {
                let own: Complex64 = wi.iter().zip(a.column(i)).map(|(x, y)| x.conj() * y).sum();
                let other: Complex64 = wi.iter().zip(a.column(1 - i)).map(|(x, y)| x.conj() * y).sum();
                assert!(wi.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
                assert!(20.0 * (other.norm() / own.norm()).log10() < -30.0);
            }
        }
    }

    #[test]
    fn extraction_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let x = Array2::from_shape_fn((6, 50), |_| Complex64::new(rng.random(), rng.random()));
        let snap = Snapshot::new(x.clone(), 0).unwrap();
        let mut e2 = Array1::<Complex64>::zeros(6);
        e2[2] = Complex64::new(1.0, 0.0);
        assert_eq!(extract_signal(&e2, &snap).unwrap(), x.row(2).to_vec());
        let zero = Snapshot::new(Array2::zeros((6, 50)), 0).unwrap();
        assert!(extract_signal(&e2, &zero).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn extracted_single_source_matches_waveform() {
        let g = ArrayGeometry::dense_uca();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let s = sample_scenario(&mut rng, &ScenarioConfig::default(), Some(1))
                .unwrap()
                .with_noise_variance(0.0);
            let snap = synthesize_block(&s, &g, 0, &mut rng).unwrap();
            let cov = crate::covariance::estimate_covariance(&snap).unwrap();
            let w = spatial_filter_weights(&cov, &g.steer(&s.sources[0].paths[0].direction)).unwrap();
            let est = extract_signal(&w, &snap).unwrap();
            let (_, c) = correlated(&est, &s.waveform(0, 0), DEFAULT_THRESHOLD);
            assert!(c > 0.99, "{c}");
        }
    }

    #[test]
    fn correlation_examples() {
        let s = gen_source_symbols(3, 220);
        let a = &s[7..207];
        let b = &s[0..200];
        let (ok, c) = correlated(a, b, DEFAULT_THRESHOLD);
        assert!(ok && c > 0.95, "{c}");
        let (ok, c) = correlated(b, b, DEFAULT_THRESHOLD);
        assert!(ok);
        assert_eq!(c, 1.0);
        assert_eq!(correlated(&[Complex64::new(0.0, 0.0); 10], b, 0.6), (false, 0.0));
    }

    #[test]
    fn independent_streams_mostly_uncorrelated() {
        // ~6 symbols per 200 samples limits how small chance correlation gets
        let mut flagged = 0;
        let mut total = 0.0;
        for k in 0..500u64 {
            let (ok, c) = correlated(&gen_source_symbols(10_000 + 2 * k, 200), &gen_source_symbols(10_001 + 2 * k, 200), 0.6);
            flagged += ok as usize;
            total += c;
        }
        assert!(total / 500.0 < 0.6);
        assert!(flagged < 250, "{flagged}");
        // averaging over blocks shrinks the spread
        let mut flagged = 0;
        for k in 0..200u64 {
            let a: Vec<_> = (0..4).map(|b| gen_source_symbols(20_000 + 8 * k + b, 200)).collect();
            let b: Vec<_> = (0..4).map(|b| gen_source_symbols(30_000 + 8 * k + b, 200)).collect();
            flagged += correlated_segments(&a, &b, 0.6).0 as usize;
        }
        assert!(flagged < 40, "{flagged}");
    }

    #[test]
    fn greedy_examples() {
        let r = associate_greedy(1, &mut OracleCorrelator { sources: vec![0] });
        assert_eq!((r.partition.clone(), r.correlation_count), (vec![vec![0]], 0));
        let r = associate_greedy(5, &mut OracleCorrelator { sources: vec![0, 1, 2, 3, 4] });
        assert_eq!(r.correlation_count, 10);
        assert_eq!(r.partition.len(), 5);
        let r = associate_greedy(5, &mut OracleCorrelator { sources: vec![0; 5] });
        assert_eq!(r.correlation_count, 4);
        assert_eq!(r.partition, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn enhanced_examples() {
        let mut o = OracleCorrelator { sources: vec![0, 1, 2, 3, 4] };
        let r = associate_enhanced(5, 5, 5, 1, &mut o).unwrap();
        assert_eq!(r.correlation_count, 0);
        assert_eq!(r.partition.len(), 5);
        let r = associate_enhanced(5, 1, 5, 5, &mut OracleCorrelator { sources: vec![0; 5] }).unwrap();
        assert_eq!(r.correlation_count, 4);
        // the single set is also the last one
        let r = associate_enhanced_with(5, 1, 5, 5, LastSet::TakeRest, &mut OracleCorrelator { sources: vec![0; 5] })
            .unwrap();
        assert_eq!(r.correlation_count, 0);
        let mut o = OracleCorrelator { sources: vec![1, 0, 0, 0, 0] };
        let r = associate_enhanced_with(5, 2, 5, 4, LastSet::TakeRest, &mut o).unwrap();
        assert_eq!(r.correlation_count, 4);
        assert_eq!(r.canonical(), vec![vec![0], vec![1, 2, 3, 4]]);
        assert!(matches!(
            associate_enhanced(4, 1, 5, 5, &mut OracleCorrelator { sources: vec![0; 4] }),
            Err(Error::LabelMismatch(_))
        ));
        assert!(matches!(
            associate_enhanced(2, 3, 2, 1, &mut OracleCorrelator { sources: vec![0, 1] }),
            Err(Error::LabelMismatch(_))
        ));
    }

    #[test]
    fn exhaustive_oracle_sweep() {
        for class in 1..=18u8 {
            let (n_s, n_m, n_p) = decode_label(class).unwrap();
            let sources = class_sources(class);
            let n = n_m as usize;
            for perm in permutations(n) {
                let ordered: Vec<usize> = perm.iter().map(|&k| sources[k]).collect();
                let truth = {
                    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_s as usize];
                    for (pos, &src) in ordered.iter().enumerate() {
                        groups[src].push(pos);
                    }
                    canonical_partition(&groups)
                };
                let g = associate_greedy(n, &mut OracleCorrelator { sources: ordered.clone() });
                assert_eq!(g.canonical(), truth);
                assert!(g.correlation_count <= n * (n - 1) / 2);
                for (last, take_rest) in [(LastSet::Correlate, false), (LastSet::TakeRest, true)] {
                    let mut oracle = OracleCorrelator { sources: ordered.clone() };
                    let e = associate_enhanced_with(n, n_s, n_m, n_p, last, &mut oracle).unwrap();
                    assert_eq!(e.canonical(), truth);
                    assert!(e.correlation_count <= g.correlation_count);
                    let expect = brute_enhanced_count(&ordered, n_s as usize, n_p as usize, take_rest);
                    assert_eq!(e.correlation_count, expect);
                }
            }
        }
    }

    #[test]
    fn random_correlators_yield_valid_partitions() {
        struct Coin(ChaCha8Rng);
        impl Correlator for Coin {
            fn correlate(&mut self, _: usize, _: usize) -> (bool, f64) {
                let c: f64 = self.0.random();
                (c > 0.5, c)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for _ in 0..10_000 {
            let class = rng.random_range(1..=18u8);
            let (n_s, n_m, n_p) = decode_label(class).unwrap();
            let mut coin = Coin(ChaCha8Rng::seed_from_u64(rng.random()));
            let r = match rng.random_range(0..3) {
                0 => associate_greedy(n_m as usize, &mut coin),
                1 => associate_enhanced(n_m as usize, n_s, n_m, n_p, &mut coin).unwrap(),
                _ => associate_enhanced_with(n_m as usize, n_s, n_m, n_p, LastSet::TakeRest, &mut coin).unwrap(),
            };
            let mut all: Vec<usize> = r.partition.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n_m as usize).collect::<Vec<_>>());
            assert!(r.partition.iter().all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn report_lists_clusters() {
        let r = associate_greedy(3, &mut OracleCorrelator { sources: vec![0, 1, 0] });
        let dirs: Vec<_> = (0..3).map(|k| DirectionPair::from_degrees(10.0 * k as f64, 5.0).unwrap()).collect();
        let txt = r.report(&dirs);
        assert!(txt.starts_with("clusters: 2\ncorrelations: 2\n"));
        assert!(txt.contains("cluster 0: [0 el/az 0.00/5.00 c rep] [2 el/az 20.00/5.00 c 1.000]"));
    }
}

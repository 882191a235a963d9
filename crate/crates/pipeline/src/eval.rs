//! Evaluation harnesses: confusion matrices, accuracy against SNR, DoA
//! error quantiles, correlation-call counts and end-to-end scoring.

use std::io::Write;

use moe_core::association::{
    associate_enhanced_with, associate_greedy, canonical_partition, LastSet, OracleCorrelator,
};
use moe_core::channel::{mix, ScenarioConfig, Scenario};
use moe_core::label::{coarsen_label, path_groups, Task, NUM_CLASSES, OVERLOADED_CLASS};
use moe_core::manifold::ArrayGeometry;
use moe_core::music::match_directions;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::ModelOrderEstimator;
use crate::pipeline::{comparable_truth, run_pipeline, simulate_scenario, PipelineOptions, PipelineReport, MAX_BLOCKS};

/// Granularity of a confusion matrix; `Nineteen` is the eighteen-class
/// task with the overloaded class kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Five,
    Nine,
    Eighteen,
    Nineteen,
}

impl EvalTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "5" => Ok(EvalTask::Five),
            "9" => Ok(EvalTask::Nine),
            "18" => Ok(EvalTask::Eighteen),
            "19" => Ok(EvalTask::Nineteen),
            other => Err(Error::setting("task", format!("{other:?} is not one of 5, 9, 18, 19"))),
        }
    }

    fn core(self) -> Task {
        match self {
            EvalTask::Five => Task::Five,
            EvalTask::Nine => Task::Nine,
            EvalTask::Eighteen | EvalTask::Nineteen => Task::Eighteen,
        }
    }

    /// Network output count for this task.
    pub fn network_classes(self) -> usize {
        if self == EvalTask::Nineteen {
            OVERLOADED_CLASS as usize
        } else {
            NUM_CLASSES as usize
        }
    }
}

/// Rows are true classes, columns predicted, both one-based in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            counts: vec![vec![0; size]; size],
        }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: u8, predicted: u8) -> Result<()> {
        let n = self.size();
        for c in [truth, predicted] {
            if c == 0 || c as usize > n {
                return Err(Error::setting("class", format!("{c} outside a {n}-class matrix")));
            }
        }
        self.counts[truth as usize - 1][predicted as usize - 1] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Trace over total; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.size()).map(|i| self.counts[i][i]).sum::<usize>() as f64 / total as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.size();
        let mut header = vec!["true\\predicted".to_string()];
        header.extend((1..=n).map(|c| c.to_string()));
        w.write_record(&header)?;
        for (i, row) in self.counts.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tallies eighteen/nineteen-class ids after coarsening both to `task`.
/// The overloaded class gets its own last row and column when it occurs or
/// the task keeps it.
pub fn eval_confusion(truth: &[u8], predicted: &[u8], task: EvalTask) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Usage(format!("{} labels but {} predictions", truth.len(), predicted.len())));
    }
    let core = task.core();
    let overloaded = task == EvalTask::Nineteen || truth.iter().chain(predicted).any(|&c| c == OVERLOADED_CLASS);
    let mut m = ConfusionMatrix::new(core.classes() + overloaded as usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        m.add(coarsen_label(t, core)?, coarsen_label(p, core)?)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrBin {
    pub lo_db: f64,
    pub hi_db: f64,
    pub count: usize,
    pub correct: usize,
}

impl SnrBin {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

/// Accuracy in `width_db` bins aligned to multiples of the width.
pub fn accuracy_by_snr(snr_db: &[f64], correct: &[bool], width_db: f64) -> Result<Vec<SnrBin>> {
    if snr_db.len() != correct.len() || snr_db.is_empty() {
        return Err(Error::Usage("SNR and outcome lists must be equal and nonempty".into()));
    }
    if width_db.is_nan() || width_db <= 0.0 {
        return Err(Error::setting("snr bin width", width_db.to_string()));
    }
    let bin = |s: f64| (s / width_db).floor() as i64;
    let lo = snr_db.iter().map(|&s| bin(s)).min().expect("nonempty");
    let hi = snr_db.iter().map(|&s| bin(s)).max().expect("nonempty");
    let mut bins: Vec<SnrBin> = (lo..=hi)
        .map(|k| SnrBin {
            lo_db: k as f64 * width_db,
            hi_db: (k + 1) as f64 * width_db,
            count: 0,
            correct: 0,
        })
        .collect();
    for (&s, &ok) in snr_db.iter().zip(correct) {
        let b = &mut bins[(bin(s) - lo) as usize];
        b.count += 1;
        b.correct += ok as usize;
    }
    Ok(bins)
}

pub fn write_snr_csv(bins: &[SnrBin], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr_lo_db", "snr_hi_db", "count", "accuracy"])?;
    for b in bins {
        let acc = b.accuracy().map_or(String::new(), |a| format!("{a:.6}"));
        w.write_record([format!("{}", b.lo_db), format!("{}", b.hi_db), b.count.to_string(), acc])?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-interpolation quantiles of `values` (non-finite values sort
/// last) at each `q` in [0, 1].
pub fn quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(moe_core::Error::EmptyInput("quantile sample").into());
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    qs.iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::setting("quantile", q.to_string()));
            }
            let pos = q * (v.len() - 1) as f64;
            let (i, frac) = (pos.floor() as usize, pos.fract());
            Ok(if frac == 0.0 || i + 1 == v.len() {
                v[i]
            } else {
                v[i] + frac * (v[i + 1] - v[i])
            })
        })
        .collect()
}

pub const REPORTED_QUANTILES: [f64; 7] = [0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

pub fn write_quantile_csv(qs: &[f64], values_deg: &[f64], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantile", "error_deg"])?;
    for (q, v) in qs.iter().zip(values_deg) {
        w.write_record([format!("{q}"), format!("{v:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-scenario mean great-circle DoA error in degrees; infinite when the
/// pipeline reports no direction.
pub fn doa_error_deg(geom: &ArrayGeometry, options: &PipelineOptions, scenario: &Scenario, report: &PipelineReport) -> f64 {
    let truth = comparable_truth(geom, &options.grid, &scenario.directions());
    let m = match_directions(&truth, &report.directions());
    if m.is_empty() {
        return f64::INFINITY;
    }
    (m.iter().map(|p| p.2).sum::<f64>() / m.len() as f64).to_degrees()
}

/// Runs the pipeline on `trials` scenarios drawn from `config` (of class
/// `class` when given) and returns each scenario's DoA error in degrees.
/// Trial `k` uses seed `mix(seed, k)`.
pub fn eval_doa_errors(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    class: Option<u8>,
    trials: usize,
    seed: u64,
    estimator: &mut ModelOrderEstimator,
    options: &PipelineOptions,
) -> Result<Vec<f64>> {
    (0..trials)
        .map(|k| {
            let (scenario, blocks) = simulate_scenario(config, geom, class, mix(seed, k as u64), MAX_BLOCKS)?;
            let report = run_pipeline(&blocks, geom, estimator, Some(&scenario.label), options)?;
            Ok(doa_error_deg(geom, options, &scenario, &report))
        })
        .collect()
}

/// Outcome of one end-to-end trial against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    /// Matched errors in degrees, in truth order.
    pub errors_deg: Vec<f64>,
    pub all_within: bool,
    pub partition_correct: bool,
}

impl TrialScore {
    pub fn success(&self) -> bool {
        self.all_within && self.partition_correct
    }
}

/// Every true path must be matched within `tolerance_deg`, and the
/// estimated partition mapped through the matching must equal the true
/// source grouping.
pub fn score_trial(
    geom: &ArrayGeometry,
    options: &PipelineOptions,
    scenario: &Scenario,
    report: &PipelineReport,
    tolerance_deg: f64,
) -> TrialScore {
    let truth = comparable_truth(geom, &options.grid, &scenario.directions());
    let matches = match_directions(&truth, &report.directions());
    let errors_deg: Vec<f64> = matches.iter().map(|m| m.2.to_degrees()).collect();
    let all_within = matches.len() == truth.len() && errors_deg.iter().all(|&e| e <= tolerance_deg);
    let partition_correct = all_within
        && report.association.as_ref().is_some_and(|a| {
            let sources = scenario.path_sources();
            let mut est_to_truth = vec![usize::MAX; report.doas.len()];
            for &(t, e, _) in &matches {
                est_to_truth[e] = t;
            }
            let mapped: Vec<Vec<usize>> =
                a.partition.iter().map(|set| set.iter().map(|&e| est_to_truth[e]).collect()).collect();
            let mut true_sets: Vec<Vec<usize>> = vec![Vec::new(); scenario.sources.len()];
            for (p, &s) in sources.iter().enumerate() {
                true_sets[s].push(p);
            }
            canonical_partition(&mapped) == canonical_partition(&true_sets)
        });
    TrialScore {
        errors_deg,
        all_within,
        partition_correct,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountRow {
    pub n_m: usize,
    pub greedy_mean: f64,
    pub enhanced_mean: f64,
    pub greedy_max: usize,
    pub enhanced_max: usize,
}

/// Mean correlation calls per path count with a perfect correlation
/// oracle: each trial draws a class with that many paths uniformly and a
/// uniformly random signal order.
pub fn eval_association_counts(trials: usize, seed: u64, last: LastSet) -> Result<Vec<CountRow>> {
    if trials == 0 {
        return Err(moe_core::Error::EmptyInput("trials").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=5usize)
        .map(|n_m| {
            let classes: Vec<u8> = (1..=NUM_CLASSES)
                .filter(|&c| path_groups(c).is_ok_and(|g| g.iter().map(|&x| x as usize).sum::<usize>() == n_m))
                .collect();
            let (mut g_sum, mut e_sum, mut g_max, mut e_max) = (0usize, 0usize, 0usize, 0usize);
            for _ in 0..trials {
                let class = classes[rng.random_range(0..classes.len())];
                let (n_s, count, n_p) = moe_core::label::decode_label(class)?;
                let mut sources: Vec<usize> = path_groups(class)?
                    .iter()
                    .enumerate()
                    .flat_map(|(s, &g)| std::iter::repeat_n(s, g as usize))
                    .collect();
                sources.shuffle(&mut rng);
                let greedy = associate_greedy(n_m, &mut OracleCorrelator { sources: sources.clone() });
                let enhanced =
                    associate_enhanced_with(n_m, n_s, count, n_p, last, &mut OracleCorrelator { sources })?;
                g_sum += greedy.correlation_count;
                e_sum += enhanced.correlation_count;
                g_max = g_max.max(greedy.correlation_count);
                e_max = e_max.max(enhanced.correlation_count);
            }
            Ok(CountRow {
                n_m,
                greedy_mean: g_sum as f64 / trials as f64,
                enhanced_mean: e_sum as f64 / trials as f64,
                greedy_max: g_max,
                enhanced_max: e_max,
            })
        })
        .collect()
}

pub fn write_count_csv(rows: &[CountRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_m", "greedy_mean", "enhanced_mean", "greedy_max", "enhanced_max"])?;
    for r in rows {
        w.write_record([
            r.n_m.to_string(),
            format!("{:.4}", r.greedy_mean),
            format!("{:.4}", r.enhanced_mean),
            r.greedy_max.to_string(),
            r.enhanced_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oracle_predictions_give_identity_matrices() {
        let truth: Vec<u8> = (1..=18).chain(1..=18).collect();
        for task in [EvalTask::Five, EvalTask::Nine, EvalTask::Eighteen] {
            let m = eval_confusion(&truth, &truth, task).unwrap();
            assert_eq!(m.accuracy(), 1.0);
            for (i, row) in m.counts.iter().enumerate() {
                assert!(row.iter().enumerate().all(|(j, &c)| i == j || c == 0));
            }
        }
        let m = eval_confusion(&[19, 1], &[19, 1], EvalTask::Five).unwrap();
        assert_eq!(m.size(), 6);
        assert_eq!(m.counts[5][5], 1);
    }

    #[test]
    fn constant_predictor_fills_the_first_column() {
        let truth: Vec<u8> = vec![1, 1, 1, 2, 5, 9, 18, 18];
        let m = eval_confusion(&truth, &vec![1; truth.len()], EvalTask::Eighteen).unwrap();
        assert_eq!(m.counts.iter().map(|r| r[0]).sum::<usize>(), truth.len());
        assert_eq!(m.counts[0][0], 3);
        assert_eq!(m.row_totals()[17], 2);
        assert!((m.accuracy() - 3.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let m = eval_confusion(&[1, 2], &[1, 1], EvalTask::Five).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "true\\predicted,1,2,3,4,5");
        assert_eq!(text.lines().nth(2).unwrap(), "2,1,0,0,0,0");
    }

    #[test]
    fn quantiles_interpolate_and_sort_infinities_last() {
        let v = [4.0, 1.0, 3.0, 2.0, f64::INFINITY];
        let q = quantiles(&v, &[0.0, 0.5, 0.625, 1.0]).unwrap();
        assert_eq!(q[0], 1.0);
        assert_eq!(q[1], 3.0);
        assert!((q[2] - 3.5).abs() < 1e-12);
        assert_eq!(q[3], f64::INFINITY);
        assert!(quantiles(&[], &[0.5]).is_err());
        assert!(quantiles(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn snr_bins_partition_the_trials() {
        let snr = [-0.5, 0.2, 1.9, 2.0, 9.99];
        let ok = [true, false, true, true, false];
        let bins = accuracy_by_snr(&snr, &ok, 2.0).unwrap();
        assert_eq!(bins.first().unwrap().lo_db, -2.0);
        assert_eq!(bins.last().unwrap().hi_db, 10.0);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(bins[1].count, 2);
        assert_eq!(bins[1].accuracy(), Some(0.5));
        assert_eq!(bins[3].accuracy(), None);
    }

    #[test]
    fn count_table_is_reproducible_and_bounded() {
        let a = eval_association_counts(2000, 5, LastSet::TakeRest).unwrap();
        assert_eq!(a, eval_association_counts(2000, 5, LastSet::TakeRest).unwrap());
        for r in &a {
            assert!(r.enhanced_mean <= r.greedy_mean);
            assert!(r.greedy_max <= r.n_m * (r.n_m - 1) / 2);
        }
        assert_eq!(a[0].greedy_mean, 0.0);
        assert_eq!(a[1].enhanced_mean, 0.0);
    }

    fn coarse_predictor() -> impl Strategy<Value = Vec<(u8, u8)>> {
        proptest::collection::vec((1u8..=18, 1u8..=18), 1..200)
    }

    proptest! {
        #[test]
        fn coarser_tasks_are_never_less_accurate(pairs in coarse_predictor()) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let acc = |task| eval_confusion(&t, &p, task).unwrap().accuracy();
            let (a5, a9, a18) = (acc(EvalTask::Five), acc(EvalTask::Nine), acc(EvalTask::Eighteen));
            prop_assert!(a5 >= a9 && a9 >= a18);
            let m = eval_confusion(&t, &p, EvalTask::Nine).unwrap();
            prop_assert_eq!(m.total(), t.len());
        }

        #[test]
        fn quantiles_are_monotone(v in proptest::collection::vec(0.0f64..180.0, 1..100)) {
            let q = quantiles(&v, &REPORTED_QUANTILES).unwrap();
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

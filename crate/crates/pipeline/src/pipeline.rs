//! Single-scenario flow: order estimate on the first block, temporal
//! smoothing with `B = n̂_P + 1`, MUSIC with `n̂_M`, spatial filtering and
//! label-guided association.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use log::{debug, warn};
use moe_core::association::{
    associate_enhanced_with, associate_greedy, extract_signal, spatial_filter_weights, AssociationResult, LastSet,
    SignalCorrelator, DEFAULT_THRESHOLD,
};
use moe_core::channel::{mix, sample_scenario, synthesize_blocks, Scenario, ScenarioConfig, Snapshot};
use moe_core::covariance::{estimate_covariance, temporal_smooth};
use moe_core::label::ModelOrderLabel;
use moe_core::manifold::{ArrayGeometry, DirectionPair};
use moe_core::music::{estimate_doas, mirror_to_upper, music_spectrum, GridSpec, Peak, SpectrumGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{ModelOrderEstimator, PredictedOrder};

/// Blocks to synthesize so that any regular prediction can be smoothed.
pub const MAX_BLOCKS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub grid: GridSpec,
    pub threshold: f64,
    pub last_set: LastSet,
}

impl PipelineOptions {
    pub fn for_geometry(geom: &ArrayGeometry) -> Self {
        Self {
            grid: GridSpec::for_geometry(geom),
            threshold: DEFAULT_THRESHOLD,
            last_set: LastSet::TakeRest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub predicted: PredictedOrder,
    /// `n̂_P + 1`; absent for overloaded scenes.
    pub smoothing_blocks: Option<usize>,
    /// Strongest first.
    pub doas: Vec<Peak>,
    /// Fewer spectrum peaks than `n̂_M`.
    pub doa_short: bool,
    pub association: Option<AssociationResult>,
    pub timings: Vec<StageTiming>,
}

impl PipelineReport {
    pub fn is_overloaded(&self) -> bool {
        self.predicted == PredictedOrder::Overloaded
    }

    pub fn directions(&self) -> Vec<DirectionPair> {
        self.doas.iter().map(|p| p.direction).collect()
    }

    /// Human-readable report without timings, so equal inputs give equal text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        match self.predicted {
            PredictedOrder::Overloaded => {
                writeln!(w, "class 19 (overloaded): direction finding skipped").unwrap();
                return out;
            }
            PredictedOrder::Regular { class18, n_s, n_m, n_p } => {
                writeln!(w, "class {class18} (n_S={n_s}, n_M={n_m}, n_P={n_p})").unwrap();
            }
        }
        if let Some(b) = self.smoothing_blocks {
            writeln!(w, "smoothing blocks {b}").unwrap();
        }
        for (i, p) in self.doas.iter().enumerate() {
            writeln!(
                w,
                "path {i}: elevation {:.2} deg, azimuth {:.2} deg, score {:.4e}{}",
                p.direction.elevation().to_degrees(),
                p.direction.azimuth().to_degrees(),
                p.score,
                if p.low_score { " (low)" } else { "" }
            )
            .unwrap();
        }
        if let Some(a) = &self.association {
            out.push_str(&a.report(&self.directions()));
        }
        out
    }
}

/// `2B − 1` blocks for `B = n_P + 1`.
pub fn required_blocks(n_p: u8) -> usize {
    2 * (n_p as usize + 1) - 1
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.push(StageTiming {
        stage,
        elapsed: start.elapsed(),
    });
    out
}

/// Runs the full flow on consecutive blocks of one scenario. `truth` is
/// read only by the oracle estimator.
pub fn run_pipeline(
    blocks: &[Snapshot],
    geom: &ArrayGeometry,
    estimator: &mut ModelOrderEstimator,
    truth: Option<&ModelOrderLabel>,
    options: &PipelineOptions,
) -> Result<PipelineReport> {
    let first = blocks.first().ok_or(moe_core::Error::EmptyInput("blocks"))?;
    if first.elements() != geom.elements() {
        return Err(Error::Usage(format!(
            "blocks have {} elements, array has {}",
            first.elements(),
            geom.elements()
        )));
    }
    let mut timings = Vec::new();
    let predicted = timed(&mut timings, "order", || {
        estimator.estimate(&estimate_covariance(first)?, truth)
    })?;
    let PredictedOrder::Regular { n_s, n_m, n_p, .. } = predicted else {
        return Ok(PipelineReport {
            predicted,
            smoothing_blocks: None,
            doas: Vec::new(),
            doa_short: false,
            association: None,
            timings,
        });
    };
    let b = n_p as usize + 1;
    let required = required_blocks(n_p);
    if blocks.len() < required {
        return Err(Error::InsufficientBlocks {
            required,
            available: blocks.len(),
        });
    }
    let smoothed = timed(&mut timings, "smoothing", || {
        let covs = blocks[..required].iter().map(estimate_covariance).collect::<moe_core::Result<Vec<_>>>()?;
        Ok(temporal_smooth(&covs, b)?)
    })?;
    let doa = timed(&mut timings, "music", || {
        Ok(estimate_doas(&smoothed, n_m as usize, geom, &options.grid)?)
    })?;
    let directions = doa.directions();

    let association = timed(&mut timings, "association", || {
        // one segment per smoothing block
        let signals = directions
            .iter()
            .map(|d| {
                let w = spatial_filter_weights(&smoothed, &geom.steer(d))?;
                blocks[..required].iter().step_by(2).map(|blk| extract_signal(&w, blk)).collect()
            })
            .collect::<moe_core::Result<Vec<Vec<_>>>>()?;
        let mut correlator = SignalCorrelator {
            signals: &signals,
            threshold: options.threshold,
        };
        if signals.len() == n_m as usize {
            Ok(associate_enhanced_with(signals.len(), n_s, n_m, n_p, options.last_set, &mut correlator)?)
        } else {
            warn!("{} of {n_m} directions found; associating greedily", signals.len());
            Ok(associate_greedy(signals.len(), &mut correlator))
        }
    })?;
    debug!("pipeline stages: {timings:?}");
    Ok(PipelineReport {
        predicted,
        smoothing_blocks: Some(b),
        doas: doa.peaks,
        doa_short: doa.short,
        association: Some(association),
        timings,
    })
}

/// MUSIC spectrum the pipeline would search for a given prediction, for
/// export.
pub fn pipeline_spectrum(
    blocks: &[Snapshot],
    geom: &ArrayGeometry,
    report: &PipelineReport,
    options: &PipelineOptions,
) -> Result<Option<SpectrumGrid>> {
    let (PredictedOrder::Regular { n_m, .. }, Some(b)) = (report.predicted, report.smoothing_blocks) else {
        return Ok(None);
    };
    let covs = blocks[..2 * b - 1].iter().map(estimate_covariance).collect::<moe_core::Result<Vec<_>>>()?;
    let smoothed = temporal_smooth(&covs, b)?;
    Ok(Some(music_spectrum(&smoothed, n_m as usize, geom, &options.grid)?))
}

/// Scenario drawn from `seed` (optionally of a forced class) and its first
/// `count` blocks.
pub fn simulate_scenario(
    config: &ScenarioConfig,
    geom: &ArrayGeometry,
    class: Option<u8>,
    seed: u64,
    count: usize,
) -> Result<(Scenario, Vec<Snapshot>)> {
    config.validate(geom.elements())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = sample_scenario(&mut rng, config, class)?;
    let blocks = synthesize_blocks(&scenario, geom, count, mix(seed, u64::MAX))?;
    Ok((scenario, blocks))
}

/// Truth directions as the array's search grid can report them: planar
/// arrays cannot tell a direction from its mirror below the array plane.
pub fn comparable_truth(geom: &ArrayGeometry, grid: &GridSpec, truth: &[DirectionPair]) -> Vec<DirectionPair> {
    if grid.upper_hemisphere && geom.is_planar() {
        truth.iter().map(mirror_to_upper).collect()
    } else {
        truth.to_vec()
    }
}

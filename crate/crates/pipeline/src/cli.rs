//! `moe` command-line interface. Every command is deterministic given
//! `--seed`; report files carry no timings.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use moe_core::association::LastSet;
use moe_core::channel::ScenarioConfig;
use moe_core::covariance::{CovarianceMatrix, Feature};
use moe_core::dataset::{generate_dataset, read_dataset, DatasetHeader, Record};
use moe_core::label::{decode_label, loss_orders, OVERLOADED_CLASS};
use moe_core::moe::{estimate_order, Criterion};
use moe_core::music::GridSpec;
use moe_neural::checkpoint;
use moe_neural::loss::LossSpec;
use moe_neural::train::predict_classes;
use moe_neural::{train, ArchKind, ArchSpec, LabeledSet, Network, TrainConfig};

use crate::arrays::ArrayPreset;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::estimator::{ModelOrderEstimator, PredictedOrder};
use crate::eval::{
    accuracy_by_snr, eval_association_counts, eval_confusion, eval_doa_errors, quantiles, write_count_csv,
    write_quantile_csv, write_snr_csv, EvalTask, REPORTED_QUANTILES,
};
use crate::pipeline::{pipeline_spectrum, run_pipeline, simulate_scenario, PipelineOptions, MAX_BLOCKS};

/// Default SNR interval for training data, dB.
const DATASET_SNR_DB: (f64, f64) = (-10.0, 10.0);
/// Default SNR interval for evaluation runs, dB.
const EVAL_SNR_DB: (f64, f64) = (0.0, 10.0);
const SNR_BIN_DB: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "moe", version, about = "Model-order estimation, DoA and association under coherent multipath")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Plain-text key = value settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = ArrayPreset::Uca6)]
    pub array: ArrayPreset,

    /// 5, 9, 18, or 19 (18 plus the overloaded class).
    #[arg(long, global = true, default_value = "18", value_parser = ["5", "9", "18", "19"])]
    pub task: String,

    #[arg(long, global = true, value_enum, default_value_t = LossArg::Ce)]
    pub loss: LossArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ce,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MoeArg {
    Oracle,
    Mdl,
    Aic,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Rcnn,
    Mlp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scenarios and write a dataset file to --out.
    GenDataset {
        #[arg(long)]
        records: Option<usize>,
    },
    /// Train a classifier on a dataset and write a checkpoint to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset; otherwise the tail of --data is held out.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Confusion matrix and accuracy against SNR on a dataset; --out is a
    /// directory.
    EvalMoe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = MoeArg::Model)]
        moe: MoeArg,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// DoA error quantiles of the full pipeline over simulated scenarios.
    EvalDoa {
        #[arg(long, value_enum, default_value_t = MoeArg::Oracle)]
        moe: MoeArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        class: Option<u8>,
    },
    /// Mean correlation calls of the association loops with a perfect
    /// correlation oracle.
    EvalAssoc {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// One simulated scenario through the whole pipeline; --out is a
    /// directory.
    Run {
        #[arg(long)]
        class: Option<u8>,
        #[arg(long, value_enum, default_value_t = MoeArg::Oracle)]
        moe: MoeArg,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// AIC and MDL path-count estimates on a dataset.
    Baseline {
        #[arg(long)]
        data: PathBuf,
    },
}

/// Machine-readable failure line.
pub fn error_line(kind: &str, message: &str) -> String {
    format!("error kind={kind} message={}", message.replace(['\n', '\r'], " "))
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let task = EvalTask::parse(&cli.task)?;
    match &cli.command {
        Command::GenDataset { records } => gen_dataset(&cli, &settings, task, *records),
        Command::Train {
            data,
            validation,
            arch,
            epochs,
        } => train_command(&cli, &settings, task, data, validation.as_deref(), *arch, *epochs),
        Command::EvalMoe { data, moe, model } => eval_moe(&cli, task, data, *moe, model.as_deref()),
        Command::EvalDoa {
            moe,
            model,
            trials,
            class,
        } => eval_doa(&cli, &settings, *moe, model.as_deref(), *trials, *class),
        Command::EvalAssoc { trials } => eval_assoc(&cli, &settings, *trials),
        Command::Run { class, moe, model } => run_one(&cli, &settings, *class, *moe, model.as_deref()),
        Command::Baseline { data } => baseline(&cli, data),
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Usage("--out is required".into()))
}

/// File under `--out`, or standard output when none was given.
fn sink(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let dir = require_out(cli)?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn gen_dataset(cli: &Cli, settings: &Settings, task: EvalTask, records: Option<usize>) -> Result<()> {
    let out = require_out(cli)?;
    let mut config = settings.scenario_with_snr(DATASET_SNR_DB);
    if task == EvalTask::Nineteen && config.overloaded_fraction == 0.0 {
        config.overloaded_fraction = 1.0 / OVERLOADED_CLASS as f64;
    }
    let count = records.unwrap_or(settings.records);
    let summary = generate_dataset(&config, &cli.array.geometry(), cli.array.name(), count, cli.seed, out)?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["class", "records"])?;
    for (i, &c) in summary.class_counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        w.write_record([(i + 1).to_string(), c.to_string()])?;
    }
    w.flush()?;
    info!("wrote {} records ({} bytes) to {}", summary.count, summary.bytes, out.display());
    Ok(())
}

/// Network input set from dataset records.
pub fn labeled_set(header: &DatasetHeader, records: &[Record]) -> Result<LabeledSet> {
    let e = header.elements;
    let mut features = Vec::with_capacity(records.len() * 2 * e * e);
    for r in records {
        let f = Feature::from_values(e, r.feature.iter().map(|&v| f64::from(v)).collect())?;
        features.extend(f.channels_first());
    }
    Ok(LabeledSet::new(e, features, records.iter().map(|r| r.class18).collect())?)
}

fn train_command(
    cli: &Cli,
    settings: &Settings,
    task: EvalTask,
    data: &Path,
    validation: Option<&Path>,
    arch: Option<ArchArg>,
    epochs: Option<usize>,
) -> Result<()> {
    let out = require_out(cli)?;
    let (header, mut records) = read_dataset(data)?;
    let held_out = match validation {
        Some(p) => {
            let (vh, vr) = read_dataset(p)?;
            if vh.elements != header.elements {
                return Err(Error::Usage("validation set uses a different array".into()));
            }
            vr
        }
        None => {
            let n = (records.len() as f64 * settings.validation_fraction).round() as usize;
            records.split_off(records.len() - n.min(records.len().saturating_sub(1)))
        }
    };
    let train_set = labeled_set(&header, &records)?;
    let val_set = (!held_out.is_empty()).then(|| labeled_set(&header, &held_out)).transpose()?;

    let kind = match arch {
        Some(ArchArg::Rcnn) => ArchKind::Rcnn,
        Some(ArchArg::Mlp) => ArchKind::Mlp,
        None => settings.arch,
    };
    let classes = task.network_classes();
    let spec = match kind {
        ArchKind::Rcnn => ArchSpec::rcnn(classes, header.elements, cli.seed),
        ArchKind::Mlp => ArchSpec::mlp(classes, header.elements, cli.seed),
    };
    let mut net = Network::build(&spec)?;
    let loss = match cli.loss {
        LossArg::Ce => LossSpec::standard(),
        LossArg::Weighted => LossSpec::weighted(settings.k1, settings.k2)?,
    };
    let config = TrainConfig {
        lr: settings.learning_rate,
        batch_size: settings.batch_size,
        epochs: epochs.unwrap_or(settings.epochs),
        seed: cli.seed,
        loss,
    };
    let report = train(&mut net, &train_set, val_set.as_ref(), &config)?;
    checkpoint::save(&net, out)?;

    let mut history = out.as_os_str().to_owned();
    history.push(".history.csv");
    let mut w = csv::Writer::from_path(PathBuf::from(history))?;
    w.write_record(["epoch", "loss", "train_accuracy", "validation_accuracy"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.loss),
            format!("{:.6}", e.train_accuracy),
            e.validation_accuracy.map_or(String::new(), |a| format!("{a:.6}")),
        ])?;
    }
    w.flush()?;
    if let Some(last) = report.epochs.last() {
        println!(
            "epochs,{},loss,{:.6},validation_accuracy,{}",
            last.epoch,
            last.loss,
            last.validation_accuracy.map_or("-".into(), |a| format!("{a:.6}"))
        );
    }
    Ok(())
}

fn load_model(path: Option<&Path>, elements: usize) -> Result<Network> {
    let path = path.ok_or_else(|| Error::Usage("--moe model needs --model <checkpoint>".into()))?;
    let net = checkpoint::load(path)?;
    if net.spec().elements != elements {
        return Err(Error::Usage(format!(
            "checkpoint is for {} elements, array has {elements}",
            net.spec().elements
        )));
    }
    Ok(net)
}

fn make_estimator(moe: MoeArg, model: Option<&Path>, elements: usize) -> Result<ModelOrderEstimator> {
    Ok(match moe {
        MoeArg::Oracle => ModelOrderEstimator::Oracle,
        MoeArg::Mdl => ModelOrderEstimator::Classical(Criterion::Mdl),
        MoeArg::Aic => ModelOrderEstimator::Classical(Criterion::Aic),
        MoeArg::Model => ModelOrderEstimator::Network(Box::new(load_model(model, elements)?)),
    })
}

/// Covariance stored in a record.
pub fn record_covariance(header: &DatasetHeader, record: &Record) -> Result<CovarianceMatrix> {
    let f = Feature::from_values(header.elements, record.feature.iter().map(|&v| f64::from(v)).collect())?;
    Ok(CovarianceMatrix::new(f.to_matrix(), header.samples_per_block, 1)?)
}

/// Path count of a class; the overloaded class has none.
fn class_n_m(class: u8) -> Option<u8> {
    decode_label(class).ok().map(|t| t.1)
}

fn eval_moe(cli: &Cli, task: EvalTask, data: &Path, moe: MoeArg, model: Option<&Path>) -> Result<()> {
    let dir = out_dir(cli)?;
    let (header, records) = read_dataset(data)?;
    let truth: Vec<u8> = records.iter().map(|r| r.class18).collect();
    let predicted = match make_estimator(moe, model, header.elements)? {
        ModelOrderEstimator::Network(mut net) => predict_classes(&mut net, &labeled_set(&header, &records)?)?,
        mut est => records
            .iter()
            .map(|r| Ok(est.estimate(&record_covariance(&header, r)?, Some(&r.label()))?.class()))
            .collect::<Result<Vec<u8>>>()?,
    };
    let confusion = eval_confusion(&truth, &predicted, task)?;
    confusion.write_csv(File::create(dir.join("confusion.csv"))?)?;

    let task_core_hits: Vec<bool> = confusion_hits(&truth, &predicted, task)?;
    let snr: Vec<f64> = records.iter().map(|r| f64::from(r.snr_db)).collect();
    write_snr_csv(&accuracy_by_snr(&snr, &task_core_hits, SNR_BIN_DB)?, File::create(dir.join("accuracy_vs_snr.csv"))?)?;

    let n_m_hits = truth
        .iter()
        .zip(&predicted)
        .filter(|(&t, &p)| class_n_m(t).is_some() && class_n_m(t) == class_n_m(p))
        .count();
    let regular = truth.iter().filter(|&&t| class_n_m(t).is_some()).count().max(1);
    println!("accuracy,{:.6}", confusion.accuracy());
    println!("n_m_accuracy,{:.6}", n_m_hits as f64 / regular as f64);
    Ok(())
}

fn confusion_hits(truth: &[u8], predicted: &[u8], task: EvalTask) -> Result<Vec<bool>> {
    truth
        .iter()
        .zip(predicted)
        .map(|(&t, &p)| {
            let m = eval_confusion(&[t], &[p], task)?;
            Ok(m.accuracy() == 1.0)
        })
        .collect()
}

fn eval_doa(
    cli: &Cli,
    settings: &Settings,
    moe: MoeArg,
    model: Option<&Path>,
    trials: Option<usize>,
    class: Option<u8>,
) -> Result<()> {
    let geom = cli.array.geometry();
    let config = settings.scenario_with_snr(EVAL_SNR_DB);
    let mut estimator = make_estimator(moe, model, geom.elements())?;
    let options = pipeline_options(settings, &geom);
    let errors = eval_doa_errors(
        &config,
        &geom,
        class.or(settings.class),
        trials.unwrap_or(settings.trials),
        cli.seed,
        &mut estimator,
        &options,
    )?;
    let q = quantiles(&errors, &REPORTED_QUANTILES)?;
    write_quantile_csv(&REPORTED_QUANTILES, &q, sink(cli)?)?;
    let failures = errors.iter().filter(|e| !e.is_finite()).count();
    info!("{} trials, {failures} without any direction", errors.len());
    Ok(())
}

fn pipeline_options(settings: &Settings, geom: &moe_core::manifold::ArrayGeometry) -> PipelineOptions {
    let base = PipelineOptions::for_geometry(geom);
    PipelineOptions {
        grid: GridSpec {
            elevation_step_deg: settings.grid_step_deg,
            azimuth_step_deg: settings.grid_step_deg,
            ..base.grid
        },
        threshold: settings.threshold,
        ..base
    }
}

fn eval_assoc(cli: &Cli, settings: &Settings, trials: Option<usize>) -> Result<()> {
    let trials = trials.unwrap_or(settings.trials);
    let mut out = sink(cli)?;
    for (name, last) in [("correlate", LastSet::Correlate), ("take-rest", LastSet::TakeRest)] {
        writeln!(out, "# last set: {name}")?;
        write_count_csv(&eval_association_counts(trials, cli.seed, last)?, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn run_one(cli: &Cli, settings: &Settings, class: Option<u8>, moe: MoeArg, model: Option<&Path>) -> Result<()> {
    let geom = cli.array.geometry();
    let config: ScenarioConfig = settings.scenario_with_snr(EVAL_SNR_DB);
    let (scenario, blocks) = simulate_scenario(&config, &geom, class.or(settings.class), cli.seed, MAX_BLOCKS)?;
    let mut estimator = make_estimator(moe, model, geom.elements())?;
    let options = pipeline_options(settings, &geom);
    let report = run_pipeline(&blocks, &geom, &mut estimator, Some(&scenario.label), &options)?;
    for t in &report.timings {
        info!("stage {} took {:?}", t.stage, t.elapsed);
    }
    let l = scenario.label;
    let mut text = format!(
        "truth: class {} (n_S={}, n_M={}, n_P={}), snr {:.2} dB\n",
        l.class18, l.n_s, l.n_m, l.n_p, scenario.los_snr_db
    );
    for (i, d) in scenario.directions().iter().enumerate() {
        text.push_str(&format!(
            "true path {i}: elevation {:.2} deg, azimuth {:.2} deg\n",
            d.elevation().to_degrees(),
            d.azimuth().to_degrees()
        ));
    }
    text.push_str(&format!("estimator: {}\n", estimator.name()));
    text.push_str(&report.to_text());
    let Some(dir) = cli.out.as_deref() else {
        print!("{text}");
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), &text)?;

    let mut w = csv::Writer::from_path(dir.join("doas.csv"))?;
    w.write_record(["path", "elevation_deg", "azimuth_deg", "score", "low_score", "cluster"])?;
    let cluster_of = |i: usize| {
        report
            .association
            .as_ref()
            .and_then(|a| a.partition.iter().position(|s| s.contains(&i)))
            .map_or(String::new(), |c| c.to_string())
    };
    for (i, p) in report.doas.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.4}", p.direction.elevation().to_degrees()),
            format!("{:.4}", p.direction.azimuth().to_degrees()),
            format!("{:.6e}", p.score),
            p.low_score.to_string(),
            cluster_of(i),
        ])?;
    }
    w.flush()?;
    if let Some(grid) = pipeline_spectrum(&blocks, &geom, &report, &options)? {
        fs::write(dir.join("spectrum.csv"), grid.to_text())?;
    }
    if report.predicted == PredictedOrder::Overloaded {
        info!("overloaded prediction: no spectrum written");
    }
    Ok(())
}

fn baseline(cli: &Cli, data: &Path) -> Result<()> {
    let (header, records) = read_dataset(data)?;
    let e = header.elements;
    // counts[criterion][true n_M][estimate]
    let mut counts = vec![vec![vec![0usize; e]; 9]; 2];
    let criteria = [(Criterion::Aic, "aic"), (Criterion::Mdl, "mdl")];
    for r in &records {
        let cov = record_covariance(&header, r)?;
        let n_m = if r.class18 == OVERLOADED_CLASS { r.n_m } else { loss_orders(r.class18)?.0 };
        for (k, (c, _)) in criteria.iter().enumerate() {
            let d = estimate_order(&cov, header.samples_per_block, *c)?.order;
            counts[k][(n_m as usize).min(8)][d] += 1;
        }
    }
    let mut w = csv::Writer::from_writer(sink(cli)?);
    w.write_record(["criterion", "true_n_m", "estimated_n_m", "count"])?;
    for (k, (_, name)) in criteria.iter().enumerate() {
        let mut hits = 0;
        for (t, row) in counts[k].iter().enumerate() {
            for (d, &c) in row.iter().enumerate().filter(|(_, &c)| c > 0) {
                w.write_record([name.to_string(), t.to_string(), d.to_string(), c.to_string()])?;
                hits += if t == d { c } else { 0 };
            }
        }
        eprintln!("{name} n_M accuracy {:.6}", hits as f64 / records.len().max(1) as f64);
    }
    w.flush()?;
    Ok(())
}

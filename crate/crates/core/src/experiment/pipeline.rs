//! End-to-end experiment: ingest, warm-up, periodic retraining, evaluation
//! and run-directory output.

use std::path::{Path, PathBuf};

use log::info;

use super::checkpoint::{load_model, load_snapshot, save_model, save_snapshot};
use super::config::{DataSource, ExperimentConfig};
use super::report::export_metrics;
use super::synth::generate_synthetic;
use crate::error::Result;
use crate::eval::{aggregate_report, evaluate_period, split_validation, EvalContext, MetricsReport, PeriodMetrics, RunInfo};
use crate::graph::{build_graph, k_core_filter, load_interactions, split_by_time, write_interactions, InteractionLog, PeriodSplit};
use crate::iem::ModelSnapshot;
use crate::train::{retrain_period, train_warmup, Finals, Model, RetrainContext, Strategy, TrainLog, Trained, WarmupContext};

/// Periods before this index only serve retraining and validation.
pub const FIRST_TEST_PERIOD: usize = 2;

pub const CONFIG_FILE: &str = "config.txt";
pub const DATA_FILE: &str = "data.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// A filtered, split interaction log.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub split: PeriodSplit,
}

impl Dataset {
    pub fn universe(&self) -> (usize, usize) {
        (self.log.user_count(), self.log.item_count())
    }
}

/// Everything one run produces besides files.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: MetricsReport,
    /// Metrics on every evaluated period, the validation-only one included.
    pub all_periods: Vec<PeriodMetrics>,
    /// Warm-up log first, then one log per retraining.
    pub logs: Vec<TrainLog>,
}

fn checkpoint_path(out: &Path, stage: Option<usize>, kind: &str) -> PathBuf {
    let name = match stage {
        None => format!("warmup.{kind}.dilc"),
        Some(n) => format!("period_{n:02}.{kind}.dilc"),
    };
    out.join(CHECKPOINT_DIR).join(name)
}

/// Filters and splits raw interactions according to `config`.
pub fn prepare(raw: InteractionLog, config: &ExperimentConfig) -> Result<Dataset> {
    let log = if config.k_core > 0 {
        k_core_filter(&raw, config.k_core)?
    } else {
        raw
    };
    let split = split_by_time(&log, config.warmup_end, config.period_length, config.periods)?;
    Ok(Dataset { log, split })
}

/// Reads the configured data source. Synthetic data is generated and, when
/// `write_to` is given, saved there.
pub fn load_data(config: &ExperimentConfig, write_to: Option<&Path>) -> Result<InteractionLog> {
    match &config.data {
        DataSource::File(path) => Ok(load_interactions(path)?),
        DataSource::Synthetic(spec) => {
            let records = generate_synthetic(spec);
            if let Some(path) = write_to {
                write_interactions(path, &records)?;
            }
            Ok(InteractionLog::from_records(records)?)
        }
    }
}

fn validation_slice(data: &Dataset, period: usize) -> Result<&[crate::graph::Interaction]> {
    let records = data.split.period_records(&data.log, period);
    Ok(split_validation(records)?.0)
}

fn evaluate(data: &Dataset, finals: &Finals, config: &ExperimentConfig, trained_through: usize) -> Result<PeriodMetrics> {
    let target = trained_through + 1;
    let ctx = EvalContext {
        known_users: data.split.known_after(trained_through).0,
        known_items: data.split.known_after(trained_through).1,
        seen: data.split.records_through(&data.log, trained_through),
        exclude_seen: config.train.exclude_seen,
    };
    let records = data.split.period_records(&data.log, target);
    Ok(evaluate_period(&finals.users, &finals.items, records, &ctx, &config.ks, target)?)
}

fn run_info(config: &ExperimentConfig) -> RunInfo {
    RunInfo {
        strategy: config.train.strategy.to_string(),
        seed: config.train.seed,
        config_hash: config.hash(),
    }
}

fn report_of(config: &ExperimentConfig, all: &[PeriodMetrics]) -> MetricsReport {
    let tests = all.iter().filter(|m| m.index >= FIRST_TEST_PERIOD).cloned().collect();
    aggregate_report(run_info(config), tests)
}

/// Warm-up and retraining over an already prepared dataset. `save` is
/// called with each stage's period (`None` for the warm-up) and result.
pub fn run_stages(
    data: &Dataset,
    config: &ExperimentConfig,
    mut save: impl FnMut(Option<usize>, &Trained) -> Result<()>,
) -> Result<PipelineRun> {
    let universe = data.universe();
    let warm_ctx = WarmupContext {
        universe,
        known: data.split.known_after_warmup(),
        records: data.split.warmup_records(&data.log),
        validation: validation_slice(data, 0).map_err(|e| e.in_stage("warm-up", None))?,
    };
    let mut previous = train_warmup(&warm_ctx, &config.model, &config.train).map_err(|e| e.in_stage("warm-up", None))?;
    info!(
        "warm-up: {} epochs, best epoch {}, validation recall {:?}",
        previous.log.epochs_run, previous.log.best_epoch, previous.log.best_validation
    );
    save(None, &previous).map_err(|e| e.in_stage("save", None))?;
    let mut logs = vec![previous.log.clone()];
    let mut all = Vec::new();
    for n in 0..data.split.period_count() - 1 {
        let ctx = RetrainContext {
            period: n,
            universe,
            known: data.split.known_after(n),
            current: data.split.period_records(&data.log, n),
            history: data.split.records_before(&data.log, n),
            seen: data.split.records_through(&data.log, n),
            validation: validation_slice(data, n + 1).map_err(|e| e.in_stage("retrain", Some(n)))?,
        };
        let trained = retrain_period(&ctx, &previous, &config.train).map_err(|e| e.in_stage("retrain", Some(n)))?;
        save(Some(n), &trained).map_err(|e| e.in_stage("save", Some(n)))?;
        let metrics = evaluate(data, &trained.finals, config, n).map_err(|e| e.in_stage("evaluate", Some(n + 1)))?;
        info!(
            "period {}: {} epochs, recall {:.4}, ndcg {:.4}",
            n + 1,
            trained.log.epochs_run,
            metrics.recall,
            metrics.ndcg
        );
        logs.push(trained.log.clone());
        all.push(metrics);
        previous = trained;
    }
    Ok(PipelineRun {
        report: report_of(config, &all),
        all_periods: all,
        logs,
    })
}

/// Runs the whole experiment and fills `config.out` with the config echo,
/// data (synthetic runs), per-stage checkpoints and snapshots, the JSON
/// report and the TSV export.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineRun> {
    config.validate()?;
    let out = &config.out;
    std::fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    std::fs::write(out.join(CONFIG_FILE), config.echo())?;
    let raw = load_data(config, Some(&out.join(DATA_FILE))).map_err(|e| e.in_stage("ingest", None))?;
    let data = prepare(raw, config).map_err(|e| e.in_stage("ingest", None))?;
    let run = run_stages(&data, config, |stage, trained| {
        save_model(checkpoint_path(out, stage, "model"), &trained.model)?;
        save_snapshot(checkpoint_path(out, stage, "snapshot"), &trained.snapshot)
    })?;
    export_metrics(&run.report, out).map_err(|e| e.in_stage("export", None))?;
    Ok(run)
}

/// Graph and previous snapshot a stage's model was run on.
fn stage_finals(
    data: &Dataset,
    config: &ExperimentConfig,
    model: &Model,
    stage: Option<usize>,
    previous: Option<&ModelSnapshot>,
) -> Result<Finals> {
    let (users, items) = data.universe();
    let warmup = data.split.warmup_records(&data.log);
    let (records, snapshot) = match (stage, config.train.strategy) {
        (None, _) | (Some(_), Strategy::NoRetrain) => (warmup, None),
        (Some(n), Strategy::Dil) => (data.split.period_records(&data.log, n), previous),
        (Some(n), Strategy::FineTune) => (data.split.period_records(&data.log, n), None),
        (Some(n), Strategy::FullRetrain) => (data.split.records_through(&data.log, n), None),
    };
    let graph = build_graph(records, users, items);
    let (_, final_rep) = model.infer(&graph, snapshot)?;
    Ok(Finals::split(&final_rep, users))
}

/// Re-evaluates a finished run from its directory: config echo, data and
/// checkpoints. Reproduces the run's report exactly.
pub fn evaluate_run(dir: impl AsRef<Path>) -> Result<MetricsReport> {
    let dir = dir.as_ref();
    let config = ExperimentConfig::from_file(dir.join(CONFIG_FILE))?;
    let raw = match &config.data {
        DataSource::Synthetic(_) => load_interactions(dir.join(DATA_FILE))?,
        DataSource::File(_) => load_data(&config, None)?,
    };
    let data = prepare(raw, &config)?;
    let mut all = Vec::new();
    let mut previous = load_snapshot(checkpoint_path(dir, None, "snapshot")).map_err(|e| e.in_stage("load", None))?;
    for n in 0..data.split.period_count() - 1 {
        let load = |kind: &str| checkpoint_path(dir, Some(n), kind);
        let model = load_model(load("model"), &config.model, config.train.aggregation).map_err(|e| e.in_stage("load", Some(n)))?;
        let finals = stage_finals(&data, &config, &model, Some(n), Some(&previous)).map_err(|e| e.in_stage("evaluate", Some(n + 1)))?;
        all.push(evaluate(&data, &finals, &config, n).map_err(|e| e.in_stage("evaluate", Some(n + 1)))?);
        previous = load_snapshot(load("snapshot")).map_err(|e| e.in_stage("load", Some(n)))?;
    }
    Ok(report_of(&config, &all))
}

//! Losses, warm-up training and per-period retraining strategies.

mod loss;
mod model;

pub use loss::{bpr_loss, total_loss, BatchNodes, LossBreakdown, LossWeights, ObjectiveInputs};
pub use model::{Finals, Forward, Model, ModelVars, EMBEDDING_INIT_BOUND};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate_targets, EvalContext};
use crate::graph::{build_graph, BipartiteGraph, DataError, Interaction, TrainingSet};
use crate::iem::{Aggregation, Design, ModelSnapshot};
use crate::models::ModelConfig;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Dil,
    FineTune,
    FullRetrain,
    NoRetrain,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Dil, Strategy::FineTune, Strategy::FullRetrain, Strategy::NoRetrain];
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dil" => Ok(Self::Dil),
            "fine_tune" => Ok(Self::FineTune),
            "full_retrain" => Ok(Self::FullRetrain),
            "no_retrain" => Ok(Self::NoRetrain),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dil => "dil",
            Self::FineTune => "fine_tune",
            Self::FullRetrain => "full_retrain",
            Self::NoRetrain => "no_retrain",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub design: Design,
    pub aggregation: Aggregation,
    pub strategy: Strategy,
    /// Cutoff of the validation recall used for early stopping.
    pub validation_k: usize,
    pub exclude_seen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            l2: 1e-4,
            lambda: 0.1,
            batch_size: 2048,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            design: Design::Gated,
            aggregation: Aggregation::Mean,
            strategy: Strategy::Dil,
            validation_k: 20,
            exclude_seen: true,
        }
    }
}

impl TrainConfig {
    /// Returns the offending key on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return Err(("learning_rate", "must be > 0".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(("lambda", "must be >= 0".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(("l2", "must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(("patience", "must be >= 1".into()));
        }
        if self.validation_k == 0 {
            return Err(("k", "cutoffs must be >= 1".into()));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            l2: self.l2,
        }
    }
}

/// Independent random stream for one stage of a run.
pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Tracks the best validation recall and the parameters that achieved it.
#[derive(Debug, Clone)]
pub struct EarlyStopState {
    pub best_recall: f64,
    pub best_epoch: usize,
    pub best: Option<Model>,
    pub since_improvement: usize,
    patience: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_recall: f64::NEG_INFINITY,
            best_epoch: 0,
            best: None,
            since_improvement: 0,
            patience,
        }
    }

    /// Records an evaluation; returns `true` once training should stop.
    pub fn observe(&mut self, epoch: usize, recall: f64, model: &Model) -> bool {
        if recall > self.best_recall {
            self.best_recall = recall;
            self.best_epoch = epoch;
            self.best = Some(model.clone());
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.patience
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation: Option<f64>,
    /// Mean total loss per epoch.
    pub losses: Vec<f64>,
    pub dcorr_skipped: usize,
    /// Lookups into the historical-positives index.
    pub history_reads: usize,
}

/// A trained model with what later stages need from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    /// Frozen outputs over the training graph, unknown rows zeroed.
    pub snapshot: ModelSnapshot,
    /// Unmasked final representations over the training graph, used for
    /// ranking (unseen nodes keep their initialized vectors).
    pub finals: Finals,
    pub log: TrainLog,
}

struct FitSetup<'a> {
    set: TrainingSet,
    graph: &'a BipartiteGraph,
    snapshot: Option<&'a ModelSnapshot>,
    validation: &'a [Interaction],
    eval: EvalContext<'a>,
}

fn numerical(e: TensorError) -> Error {
    match e {
        TensorError::NanGradient { .. } | TensorError::Domain { .. } => Error::Numerical(e.to_string()),
        other => Error::Tensor(other),
    }
}

fn validation_recall(model: &Model, setup: &FitSetup<'_>, k: usize) -> Result<f64> {
    let (_, final_rep) = model.infer(setup.graph, setup.snapshot).map_err(numerical)?;
    let finals = Finals::split(&final_rep, setup.graph.user_count);
    let m = evaluate_targets(&finals.users, &finals.items, setup.validation, &setup.eval, &[k], 0)?;
    Ok(m.recall)
}

fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    adam: &mut Adam,
    setup: &FitSetup<'_>,
    batch: &BatchNodes,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, setup.graph, setup.snapshot, true)?;
    let dense = fwd.vars.dense();
    let inputs = ObjectiveInputs {
        finals: fwd.stack.final_rep,
        embeddings: fwd.vars.embeddings,
        e_hist: fwd.e_hist,
        e_extract: fwd.vars.extractor.as_ref().map(|x| x.extract),
        dense: &dense,
    };
    let out = total_loss(&mut tape, batch, inputs, config.weights(), rng).map_err(numerical)?;
    let vars = fwd.vars.ordered();
    let grads = tape.backward(out.total).map_err(numerical)?;
    for ((name, param), var) in model.named_mut().into_iter().zip(vars) {
        let grad = grads
            .get(var)
            .ok_or_else(|| Error::Numerical(format!("no gradient for `{name}`")))?;
        adam.step(&name, param, grad, config.learning_rate).map_err(numerical)?;
    }
    Ok(out)
}

fn fit(mut model: Model, setup: &FitSetup<'_>, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Model, TrainLog)> {
    let mut log = TrainLog::default();
    let mut adam = Adam::new(AdamConfig::default());
    let validate = !setup.validation.is_empty();
    let mut stop = EarlyStopState::new(config.patience);
    if validate && config.max_epochs > 0 {
        let recall = validation_recall(&model, setup, config.validation_k)?;
        stop.observe(0, recall, &model);
    }
    for epoch in 1..=config.max_epochs {
        let quads = setup.set.epoch(rng)?;
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in quads.chunks(config.batch_size) {
            let batch = BatchNodes::from_quads(chunk, setup.graph.user_count);
            let out = train_step(&mut model, &mut adam, setup, &batch, config, rng)?;
            total += out.bpr + out.hist + config.lambda * out.dcorr + out.l2;
            log.dcorr_skipped += out.dcorr_skipped;
            steps += 1;
        }
        let mean = total / steps.max(1) as f64;
        log.losses.push(mean);
        log.epochs_run = epoch;
        if !validate {
            continue;
        }
        let recall = validation_recall(&model, setup, config.validation_k)?;
        log::debug!("epoch {epoch}: loss {mean:.5}, validation recall {recall:.5}");
        if stop.observe(epoch, recall, &model) {
            break;
        }
    }
    if let Some(best) = stop.best.take() {
        model = best;
        log.best_epoch = stop.best_epoch;
        log.best_validation = Some(stop.best_recall);
    } else {
        log.best_epoch = log.epochs_run;
    }
    log.history_reads = setup.set.history_reads();
    Ok((model, log))
}

/// Rounds parameters and snapshot to checkpoint precision, so a reloaded
/// model reproduces the in-memory one exactly.
fn finish(
    mut model: Model,
    log: TrainLog,
    graph: &BipartiteGraph,
    previous: Option<&ModelSnapshot>,
    period: Option<usize>,
    known: (usize, usize),
) -> Result<Trained> {
    model.round_to_f32();
    let (mut layers, mut final_rep) = model.infer(graph, previous).map_err(numerical)?;
    let finals = Finals::split(&final_rep, graph.user_count);
    layers.iter_mut().chain(std::iter::once(&mut final_rep)).for_each(Tensor::round_to_f32);
    let snapshot = ModelSnapshot::new(period, (graph.user_count, graph.item_count), known, layers, final_rep)?;
    Ok(Trained {
        model,
        snapshot,
        finals,
        log,
    })
}

/// Inputs of the warm-up stage.
#[derive(Debug, Clone, Copy)]
pub struct WarmupContext<'a> {
    pub universe: (usize, usize),
    pub known: (usize, usize),
    pub records: &'a [Interaction],
    /// Leading slice of the first period.
    pub validation: &'a [Interaction],
}

/// Trains the base model on the warm-up window with plain BPR.
pub fn train_warmup(ctx: &WarmupContext<'_>, model_config: &ModelConfig, config: &TrainConfig) -> Result<Trained> {
    if ctx.records.is_empty() {
        return Err(DataError::Empty.into());
    }
    let (users, items) = ctx.universe;
    let mut rng = stage_rng(config.seed, 0);
    let model = Model::init(*model_config, users + items, &mut rng);
    let graph = build_graph(ctx.records, users, items);
    let setup = FitSetup {
        set: TrainingSet::new(ctx.records, None, users, ctx.known.1),
        graph: &graph,
        snapshot: None,
        validation: ctx.validation,
        eval: EvalContext {
            known_users: ctx.known.0,
            known_items: ctx.known.1,
            seen: ctx.records,
            exclude_seen: config.exclude_seen,
        },
    };
    let (model, log) = fit(model, &setup, config, &mut rng)?;
    finish(model, log, &graph, None, None, ctx.known)
}

/// Everything a retraining step at the end of period `n` may use.
#[derive(Debug, Clone, Copy)]
pub struct RetrainContext<'a> {
    pub period: usize,
    pub universe: (usize, usize),
    /// Users and items known by the end of the period.
    pub known: (usize, usize),
    /// Interactions of the period.
    pub current: &'a [Interaction],
    /// Interactions of all earlier windows, warm-up included.
    pub history: &'a [Interaction],
    /// All interactions up to the end of the period.
    pub seen: &'a [Interaction],
    /// Leading slice of the next period.
    pub validation: &'a [Interaction],
}

/// Produces the model for the end of `ctx.period` from the previous model
/// of the same strategy.
pub fn retrain_period(ctx: &RetrainContext<'_>, previous: &Trained, config: &TrainConfig) -> Result<Trained> {
    if ctx.current.is_empty() {
        return Err(DataError::EmptyPeriod { index: ctx.period }.into());
    }
    let (users, items) = ctx.universe;
    let mut rng = stage_rng(config.seed, ctx.period as u64 + 1);
    let eval = EvalContext {
        known_users: ctx.known.0,
        known_items: ctx.known.1,
        seen: ctx.seen,
        exclude_seen: config.exclude_seen,
    };
    match config.strategy {
        Strategy::NoRetrain => Ok(previous.clone()),
        Strategy::FineTune | Strategy::FullRetrain => {
            let (records, model) = if config.strategy == Strategy::FineTune {
                (ctx.current, previous.model.clone())
            } else {
                (ctx.seen, Model::init(previous.model.config, users + items, &mut rng))
            };
            let graph = build_graph(records, users, items);
            let setup = FitSetup {
                set: TrainingSet::new(records, None, users, ctx.known.1),
                graph: &graph,
                snapshot: None,
                validation: ctx.validation,
                eval,
            };
            let (model, log) = fit(model, &setup, config, &mut rng)?;
            finish(model, log, &graph, None, Some(ctx.period), ctx.known)
        }
        Strategy::Dil => {
            let snapshot = &previous.snapshot;
            if snapshot.layer_count() != previous.model.config.layers + 1 {
                return Err(Error::Config(format!(
                    "snapshot holds {} layer outputs but the model has {} layers",
                    snapshot.layer_count(),
                    previous.model.config.layers
                )));
            }
            let model = dil_initial_model(previous, config, &mut rng);
            let graph = build_graph(ctx.current, users, items);
            let setup = FitSetup {
                set: TrainingSet::new(ctx.current, Some(ctx.history), users, ctx.known.1),
                graph: &graph,
                snapshot: Some(snapshot),
                validation: ctx.validation,
                eval,
            };
            let (model, log) = fit(model, &setup, config, &mut rng)?;
            finish(model, log, &graph, Some(snapshot), Some(ctx.period), ctx.known)
        }
    }
}

/// `e_new` starts at the previous final representation for nodes the
/// previous model knew and at a fresh uniform draw otherwise; the
/// extractor and dense weights carry over.
fn dil_initial_model<R: Rng + ?Sized>(previous: &Trained, config: &TrainConfig, rng: &mut R) -> Model {
    let snapshot = &previous.snapshot;
    let mut model = previous.model.clone();
    let fresh = Tensor::uniform(model.node_count(), model.config.dim, EMBEDDING_INIT_BOUND, rng);
    for node in 0..model.node_count() {
        let src = if snapshot.knows(node) {
            snapshot.final_rep().row(node)
        } else {
            fresh.row(node)
        };
        model.embeddings.row_mut(node).copy_from_slice(src);
    }
    if model.extractor.is_none() {
        model = model.with_extractor(config.design, config.aggregation, rng);
    }
    model
}

#[cfg(test)]
mod tests;

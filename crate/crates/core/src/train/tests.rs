use super::*;
use crate::graph::Interaction;

fn rec(user: usize, item: usize, timestamp: i64) -> Interaction {
    Interaction { user, item, timestamp }
}

/// Users prefer items of their own parity; 8 users, 8 items.
fn toy_log(offset: usize, start: i64, len: usize) -> Vec<Interaction> {
    (0..len)
        .map(|t| {
            let u = t % 8;
            let i = (u % 2 + 2 * ((t / 8 + offset) % 4)) % 8;
            rec(u, i, start + t as i64)
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 10,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        dim: 4,
        ..ModelConfig::default()
    }
}

fn warm(config: &TrainConfig, validation: &[Interaction]) -> Trained {
    let records = toy_log(0, 0, 24);
    let ctx = WarmupContext {
        universe: (8, 8),
        known: (8, 8),
        records: &records,
        validation,
    };
    train_warmup(&ctx, &model_config(), config).unwrap()
}

struct Period {
    current: Vec<Interaction>,
    history: Vec<Interaction>,
    seen: Vec<Interaction>,
    validation: Vec<Interaction>,
}

fn period() -> Period {
    let history = toy_log(0, 0, 24);
    let current = toy_log(1, 100, 24);
    let seen: Vec<Interaction> = history.iter().chain(&current).copied().collect();
    Period {
        current,
        history,
        seen,
        validation: toy_log(2, 200, 8),
    }
}

fn retrain(p: &Period, previous: &Trained, config: &TrainConfig) -> Trained {
    let ctx = RetrainContext {
        period: 0,
        universe: (8, 8),
        known: (8, 8),
        current: &p.current,
        history: &p.history,
        seen: &p.seen,
        validation: &p.validation,
    };
    retrain_period(&ctx, previous, config).unwrap()
}

#[test]
fn warmup_loss_decreases_early() {
    let cfg = TrainConfig {
        max_epochs: 50,
        ..config()
    };
    let trained = warm(&cfg, &[]);
    assert_eq!(trained.log.losses.len(), 50);
    for w in trained.log.losses[..5].windows(2) {
        assert!(w[1] < w[0], "{:?}", &trained.log.losses[..5]);
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let cfg = TrainConfig {
        max_epochs: 0,
        ..config()
    };
    let trained = warm(&cfg, &toy_log(1, 100, 8));
    let mut rng = stage_rng(cfg.seed, 0);
    let mut init = Model::init(model_config(), 16, &mut rng);
    init.round_to_f32();
    assert_eq!(trained.model, init);
    assert_eq!(trained.log.epochs_run, 0);
}

#[test]
fn early_stop_restores_best_epoch() {
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 2,
        ..config()
    };
    let validation = toy_log(1, 100, 16);
    let trained = warm(&cfg, &validation);
    let best = trained.log.best_validation.unwrap();
    let eval = EvalContext {
        known_users: 8,
        known_items: 8,
        seen: &toy_log(0, 0, 24),
        exclude_seen: cfg.exclude_seen,
    };
    let m = evaluate_targets(&trained.finals.users, &trained.finals.items, &validation, &eval, &[20], 0).unwrap();
    assert!((m.recall - best).abs() < 1e-12);
    assert!(trained.log.best_epoch <= trained.log.epochs_run);
}

#[test]
fn early_stop_counter() {
    let mut rng = stage_rng(0, 0);
    let model = Model::init(model_config(), 4, &mut rng);
    let mut s = EarlyStopState::new(2);
    assert!(!s.observe(0, 0.1, &model));
    assert!(!s.observe(1, 0.1, &model));
    assert!(!s.observe(2, 0.2, &model));
    assert_eq!(s.since_improvement, 0);
    assert!(!s.observe(3, 0.2, &model));
    assert!(s.observe(4, 0.15, &model));
    assert_eq!(s.best_epoch, 2);
}

#[test]
fn no_retrain_is_identity() {
    let cfg = config();
    let warm = warm(&cfg, &[]);
    let p = period();
    let out = retrain(
        &p,
        &warm,
        &TrainConfig {
            strategy: Strategy::NoRetrain,
            ..cfg
        },
    );
    assert_eq!(out.model, warm.model);
    for ((_, a), (_, b)) in out.model.named().into_iter().zip(warm.model.named()) {
        let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = config();
    let p = period();
    let run = || {
        let w = warm(&cfg, &p.current[..8]);
        retrain(&p, &w, &cfg)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.model.extractor.is_some());
}

#[test]
fn baselines_ignore_history_and_snapshot_layers() {
    let cfg = config();
    let warm = warm(&cfg, &[]);
    let p = period();
    for strategy in [Strategy::FineTune, Strategy::FullRetrain] {
        let before = warm.snapshot.layer_reads();
        let out = retrain(&p, &warm, &TrainConfig { strategy, ..cfg.clone() });
        assert_eq!(warm.snapshot.layer_reads(), before, "{strategy}");
        assert_eq!(out.log.history_reads, 0, "{strategy}");
        assert!(out.model.extractor.is_none());
    }
    let before = warm.snapshot.layer_reads();
    let out = retrain(&p, &warm, &cfg);
    assert!(warm.snapshot.layer_reads() > before);
    assert!(out.log.history_reads > 0);
}

#[test]
fn dil_step_routes_gradients() {
    let cfg = config();
    let warm = warm(&cfg, &[]);
    let mut rng = stage_rng(1, 1);
    for design in [Design::Gated, Design::Linear] {
        let cfg = TrainConfig { design, ..cfg.clone() };
        let model = dil_initial_model(&warm, &cfg, &mut rng);
        let p = period();
        let graph = build_graph(&p.current, 8, 8);
        let set = TrainingSet::new(&p.current, Some(&p.history), 8, 8);
        let quads = set.epoch(&mut rng).unwrap();
        let batch = BatchNodes::from_quads(&quads, 8);

        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &graph, Some(&warm.snapshot), true).unwrap();
        let dense = fwd.vars.dense();
        let inputs = ObjectiveInputs {
            finals: fwd.stack.final_rep,
            embeddings: fwd.vars.embeddings,
            e_hist: fwd.e_hist,
            e_extract: fwd.vars.extractor.as_ref().map(|x| x.extract),
            dense: &dense,
        };
        let out = total_loss(&mut tape, &batch, inputs, cfg.weights(), &mut rng).unwrap();
        let snapshot_vars = fwd.snapshot_layers.clone();
        assert_eq!(snapshot_vars.len(), 3);
        for (v, t) in snapshot_vars.iter().zip(warm.snapshot.layers()) {
            assert_eq!(tape.value(*v), t);
        }
        let grads = tape.backward(out.total).unwrap();
        assert!(snapshot_vars.iter().all(|&v| grads.get(v).is_none()));
        let nonzero = |v| grads.get(v).unwrap().iter().any(|&g| g != 0.0);
        let x = fwd.vars.extractor.as_ref().unwrap();
        assert!(nonzero(fwd.vars.embeddings));
        assert!(nonzero(x.extract));
        assert!(x.dense().into_iter().all(nonzero), "{design:?}");
    }
}

#[test]
fn dil_initializes_from_previous_finals() {
    let cfg = config();
    let warm = warm(&cfg, &[]);
    let mut rng = stage_rng(2, 2);
    let model = dil_initial_model(&warm, &cfg, &mut rng);
    assert_eq!(model.embeddings, *warm.snapshot.final_rep());
    assert_eq!(model.extractor.as_ref().unwrap().design, Design::Gated);
}

#[test]
fn empty_period_is_rejected() {
    let cfg = config();
    let warm = warm(&cfg, &[]);
    let ctx = RetrainContext {
        period: 3,
        universe: (8, 8),
        known: (8, 8),
        current: &[],
        history: &[],
        seen: &[],
        validation: &[],
    };
    assert!(matches!(
        retrain_period(&ctx, &warm, &cfg),
        Err(Error::Data(DataError::EmptyPeriod { index: 3 }))
    ));
}

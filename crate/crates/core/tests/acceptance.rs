//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dil_core::disentangle::{distance_correlation, fuse_initial, DcorrBatch};
use dil_core::eval::{ndcg_at_k, rank_items, recall_at_k};
use dil_core::experiment::checkpoint::{load_model, load_snapshot, save_model, save_snapshot};
use dil_core::experiment::pipeline::{load_data, prepare, run_stages, Dataset};
use dil_core::experiment::{evaluate_run, run_pipeline, ExperimentConfig};
use dil_core::graph::{build_graph, Interaction, TrainingQuad};
use dil_core::iem::{extract_table, Aggregation, Design, ExtractorParams};
use dil_core::models::{infer, propagate, ModelConfig, ModelKind, NgcfWeights};
use dil_core::tensor::{Tape, Tensor, TensorError, Var};
use dil_core::train::{
    bpr_loss, retrain_period, total_loss, train_warmup, BatchNodes, LossWeights, ObjectiveInputs, RetrainContext,
    Strategy, TrainConfig, Trained, WarmupContext,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(number: usize, title: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "[{}] criterion {number}: {title}: {} ({:.1}s, limit {}s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", over time" }
    );
    pass
}

// ---------------------------------------------------------------------------
// 1. gradients

type Objective<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'a;

/// Largest relative error between tape gradients and central differences.
/// Relative error uses a denominator floor of 1e-3.
fn max_gradient_error(f: &Objective<'_>, params: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let value = |ps: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs).unwrap();
        t.value(out).item()
    };
    let h = 1e-6;
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).unwrap().to_vec();
        for (e, a) in analytic.into_iter().enumerate() {
            let orig = work[p].values()[e];
            work[p].values_mut()[e] = orig + h;
            let plus = value(&work);
            work[p].values_mut()[e] = orig - h;
            let minus = value(&work);
            work[p].values_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    worst
}

struct Toy {
    users: usize,
    items: usize,
    dim: usize,
    layers: usize,
    records: Vec<Interaction>,
    quads: Vec<TrainingQuad>,
}

fn toy(rng: &mut ChaCha8Rng) -> Toy {
    let users = rng.random_range(2..=8);
    let items = rng.random_range(3..=8);
    let dim = rng.random_range(2..=4);
    let layers = rng.random_range(1..=2);
    let mut records = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.random_bool(0.4) {
                records.push(Interaction {
                    user: u,
                    item: i,
                    timestamp: records.len() as i64,
                });
            }
        }
    }
    let quads = (0..6)
        .map(|_| TrainingQuad {
            user: rng.random_range(0..users),
            pos: rng.random_range(0..items),
            neg: rng.random_range(0..items),
            hist: rng.random_bool(0.7).then(|| rng.random_range(0..items)),
        })
        .collect();
    Toy {
        users,
        items,
        dim,
        layers,
        records,
        quads,
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut errors: Vec<(&str, f64, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64, tol: f64| {
        if let Some(e) = errors.iter_mut().find(|e| e.0 == name) {
            e.1 = e.1.max(err);
        } else {
            errors.push((name, err, tol));
        }
    };
    for _ in 0..4 {
        let t = toy(&mut rng);
        let n = t.users + t.items;
        let graph = build_graph(&t.records, t.users, t.items);
        let config = ModelConfig {
            kind: ModelKind::LightGcn,
            layers: t.layers,
            dim: t.dim,
            ..ModelConfig::default()
        };
        let batch = BatchNodes::from_quads(&t.quads, t.users);
        let plain: Vec<TrainingQuad> = t.quads.iter().map(|q| TrainingQuad { hist: None, ..*q }).collect();
        let plain_batch = BatchNodes::from_quads(&plain, t.users);

        // BPR through propagation
        let bpr = |tape: &mut Tape, v: &[Var]| {
            let stack = propagate(tape, &config, &graph, v[0], None)?;
            let u = tape.gather_rows(stack.final_rep, &plain_batch.users)?;
            let i = tape.gather_rows(stack.final_rep, &plain_batch.pos)?;
            let j = tape.gather_rows(stack.final_rep, &plain_batch.neg)?;
            let pos = tape.row_dot(u, i)?;
            let neg = tape.row_dot(u, j)?;
            bpr_loss(tape, pos, neg)
        };
        record("bpr", max_gradient_error(&bpr, &[uniform(n, t.dim, &mut rng)]), 1e-4);

        // frozen snapshot layers
        let snapshot: Vec<Tensor> = (0..=t.layers).map(|_| uniform(n, t.dim, &mut rng)).collect();
        for design in [Design::Gated, Design::Linear] {
            let mut params = ExtractorParams::init(design, Aggregation::Mean, n, t.layers, t.dim, &mut rng);
            params.extract = uniform(n, t.dim, &mut rng);
            for p in &mut params.pos {
                *p = Tensor::vector((0..t.dim).map(|_| rng.random_range(-0.5..0.5)).collect());
            }
            for w in &mut params.weights {
                *w = uniform(t.dim, t.dim, &mut rng);
            }
            let dense_count = params.pos.len() + params.weights.len();
            let mut tensors = vec![params.extract.clone()];
            tensors.extend(params.pos.iter().cloned());
            tensors.extend(params.weights.iter().cloned());
            let mix = uniform(n, t.dim, &mut rng);
            let vars_of = |v: &[Var]| dil_core::iem::ExtractorVars {
                extract: v[0],
                pos: if design == Design::Gated { v[1..=dense_count].to_vec() } else { Vec::new() },
                weights: if design == Design::Linear { v[1..=dense_count].to_vec() } else { Vec::new() },
                projection: None,
            };
            let snap = &snapshot;
            let extraction = |tape: &mut Tape, v: &[Var]| {
                let layers: Vec<Var> = snap.iter().map(|s| tape.constant(s.clone())).collect();
                let e_hist = extract_table(tape, &layers, &vars_of(v), design, Aggregation::Mean)?;
                let w = tape.constant(mix.clone());
                let weighted = tape.mul(e_hist, w)?;
                tape.sum(weighted)
            };
            let name = if design == Design::Gated { "design 1 extraction" } else { "design 2 extraction" };
            record(name, max_gradient_error(&extraction, &tensors), 1e-4);

            // full objective: extraction, fusion, propagation and loss
            let mut full = tensors.clone();
            full.push(uniform(n, t.dim, &mut rng));
            for (name, weights, tol) in [
                ("joint loss (lambda = 0)", LossWeights { lambda: 0.0, l2: 0.0 }, 1e-4),
                ("total loss (lambda = 0.5)", LossWeights { lambda: 0.5, l2: 0.01 }, 1e-4),
            ] {
                let objective = |tape: &mut Tape, v: &[Var]| {
                    let xv = vars_of(v);
                    let e_new = v[dense_count + 1];
                    let layers: Vec<Var> = snap.iter().map(|s| tape.constant(s.clone())).collect();
                    let e_hist = extract_table(tape, &layers, &xv, design, Aggregation::Mean)?;
                    let h0 = fuse_initial(tape, e_hist, e_new)?;
                    let stack = propagate(tape, &config, &graph, h0, None)?;
                    let dense = xv.dense();
                    let inputs = ObjectiveInputs {
                        finals: stack.final_rep,
                        embeddings: e_new,
                        e_hist: Some(e_hist),
                        e_extract: Some(xv.extract),
                        dense: &dense,
                    };
                    let mut r = ChaCha8Rng::seed_from_u64(7);
                    Ok(total_loss(tape, &batch, inputs, weights, &mut r)?.total)
                };
                record(name, max_gradient_error(&objective, &full), tol);
            }
        }

        // distance correlation
        let rows = rng.random_range(4..=8);
        let dcorr = |tape: &mut Tape, v: &[Var]| distance_correlation(tape, DcorrBatch { x: v[0], y: v[1] });
        let pair = [uniform(rows, t.dim, &mut rng), uniform(rows, t.dim, &mut rng)];
        record("distance correlation", max_gradient_error(&dcorr, &pair), 1e-3);
    }
    let pass = errors.iter().all(|(_, e, tol)| e < tol);
    let detail = errors
        .iter()
        .map(|(n, e, tol)| format!("{n} {e:.1e} < {tol:.0e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 2. propagation

fn dense_reference(
    n_users: usize,
    n_items: usize,
    edges: &[(usize, usize)],
    h0: &Tensor,
    kind: ModelKind,
    w: &NgcfWeights,
    layers: usize,
    slope: f64,
) -> Vec<Vec<Vec<f64>>> {
    let n = n_users + n_items;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        a[u][n_users + i] = 1.0;
        a[n_users + i][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut norm = vec![vec![0.0; n]; n];
    for r in 0..n {
        for c in 0..n {
            if a[r][c] != 0.0 {
                norm[r][c] = 1.0 / (deg[r].sqrt() * deg[c].sqrt());
            }
        }
    }
    let d = h0.cols();
    let mut out = vec![(0..n).map(|r| h0.row(r).to_vec()).collect::<Vec<_>>()];
    for l in 0..layers {
        let h = out.last().unwrap();
        let agg: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..d).map(|k| (0..n).map(|c| norm[r][c] * h[c][k]).sum()).collect())
            .collect();
        let next = match kind {
            ModelKind::LightGcn => agg,
            ModelKind::Ngcf => {
                let mat = |m: &Tensor, row: &[f64], k: usize| (0..d).map(|q| row[q] * m.get(q, k)).sum::<f64>();
                (0..n)
                    .map(|r| {
                        let sum: Vec<f64> = (0..d).map(|k| h[r][k] + agg[r][k]).collect();
                        let prod: Vec<f64> = (0..d).map(|k| agg[r][k] * h[r][k]).collect();
                        (0..d)
                            .map(|k| {
                                let x = mat(&w.w1[l], &sum, k)
                                    + w.b1[l].values()[k]
                                    + mat(&w.w2[l], &prod, k)
                                    + w.b2[l].values()[k];
                                if x >= 0.0 {
                                    x
                                } else {
                                    slope * x
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        out.push(next);
    }
    out
}

fn criterion_propagation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let cases = 60;
    for case in 0..cases {
        let n_users = rng.random_range(1..=32);
        let n_items = rng.random_range(1..=(64 - n_users).min(32));
        let density = rng.random_range(0.05..0.5);
        let mut edges = Vec::new();
        let mut records = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                if rng.random_bool(density) {
                    edges.push((u, i));
                    // duplicates must collapse to one edge
                    let copies = if rng.random_bool(0.1) { 2 } else { 1 };
                    for _ in 0..copies {
                        records.push(Interaction {
                            user: u,
                            item: i,
                            timestamp: 0,
                        });
                    }
                }
            }
        }
        let graph = build_graph(&records, n_users, n_items);
        let kind = if case % 2 == 0 { ModelKind::LightGcn } else { ModelKind::Ngcf };
        let dim = rng.random_range(1..=4);
        let layers = rng.random_range(1..=3);
        let config = ModelConfig {
            kind,
            layers,
            dim,
            leaky_relu_slope: 0.2,
        };
        let h0 = Tensor::uniform(n_users + n_items, dim, 1.0, &mut rng);
        let mut w = NgcfWeights::init(layers, dim, &mut rng);
        for b in w.b1.iter_mut().chain(w.b2.iter_mut()) {
            *b = Tensor::vector((0..dim).map(|_| rng.random_range(-0.5..0.5)).collect());
        }
        let (got, _) = infer(&config, &graph, &h0, (kind == ModelKind::Ngcf).then_some(&w)).unwrap();
        let want = dense_reference(n_users, n_items, &edges, &h0, kind, &w, layers, 0.2);
        for (g, w) in got.iter().zip(&want) {
            for (r, row) in w.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    worst = worst.max((g.get(r, k) - v).abs());
                }
            }
        }
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("{cases} graphs, max abs deviation {worst:.1e} < 1e-10"),
    }
}

// ---------------------------------------------------------------------------
// 3. distance correlation

fn dcorr_value(x: &Tensor, y: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let batch = DcorrBatch {
        x: tape.constant(x.clone()),
        y: tape.constant(y.clone()),
    };
    let v = distance_correlation(&mut tape, batch).unwrap();
    tape.value(v).item()
}

/// Textbook double-centred distance correlation.
fn dcorr_oracle(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    let centered = |t: &Tensor| {
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        let row: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| d[i][j]).sum::<f64>() / n as f64).collect();
        let all = row.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| (0..n).map(|j| d[i][j] - row[i] - col[j] + all).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    let (a, b) = (centered(x), centered(y));
    let v = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        p.iter().flatten().zip(q.iter().flatten()).map(|(s, t)| s * t).sum::<f64>() / (n * n) as f64
    };
    let (xy, xx, yy) = (v(&a, &b), v(&a, &a), v(&b, &b));
    (xy.max(0.0) / (xx * yy).sqrt()).sqrt()
}

fn criterion_dcorr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut self_err, mut inv_err, mut oracle_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut in_range = true;
    let cases = 100;
    for _ in 0..cases {
        let n = rng.random_range(3..=16);
        let (dx, dy) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let x = Tensor::uniform(n, dx, 1.0, &mut rng);
        let y = Tensor::uniform(n, dy, 1.0, &mut rng);
        let value = dcorr_value(&x, &y);
        in_range &= (0.0..=1.0).contains(&value);
        self_err = self_err.max((dcorr_value(&x, &x) - 1.0).abs());
        oracle_err = oracle_err.max((value - dcorr_oracle(&x, &y)).abs());
        let c = rng.random_range(0.1..10.0);
        let shift: Vec<f64> = (0..dx).map(|_| rng.random_range(-5.0..5.0)).collect();
        let moved = Tensor::matrix(
            n,
            dx,
            x.values().iter().enumerate().map(|(e, v)| c * v + shift[e % dx]).collect(),
        )
        .unwrap();
        inv_err = inv_err.max((dcorr_value(&moved, &y) - value).abs());
        inv_err = inv_err.max((dcorr_value(&y, &moved) - value).abs());
    }
    Outcome {
        pass: self_err < 1e-6 && inv_err < 1e-8 && in_range && oracle_err < 1e-10,
        detail: format!(
            "{cases} cases, |dcorr(X,X)-1| {self_err:.1e}, invariance {inv_err:.1e}, in [0,1] {in_range}, oracle {oracle_err:.1e}"
        ),
    }
}

// ---------------------------------------------------------------------------
// 4. metrics

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    let cases = 1000;
    for _ in 0..cases {
        let items = rng.random_range(1..=40);
        let dim = rng.random_range(1..=4);
        let k = rng.random_range(1..=25);
        // coarse values create ties
        let table = Tensor::matrix(items, dim, (0..items * dim).map(|_| rng.random_range(-3..=3) as f64).collect()).unwrap();
        let user: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
        let candidates = rng.random_range(1..=items);
        let excluded: Vec<usize> = (0..candidates).filter(|_| rng.random_bool(0.2)).collect();
        let mut relevant: Vec<usize> = (0..candidates)
            .filter(|i| !excluded.contains(i) && rng.random_bool(0.3))
            .collect();
        if relevant.is_empty() {
            match (0..candidates).find(|i| !excluded.contains(i)) {
                Some(i) => relevant.push(i),
                None => continue,
            }
        }
        let ranked = rank_items(&user, &table, candidates, &excluded, k);

        // brute force: score everything, stable sort by descending score
        let mut all: Vec<(usize, f64)> = (0..candidates)
            .filter(|i| !excluded.contains(i))
            .map(|i| (i, user.iter().zip(table.row(i)).map(|(a, b)| a * b).sum()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let want: Vec<usize> = all.iter().take(k).map(|e| e.0).collect();
        let hits: Vec<bool> = want.iter().map(|i| relevant.contains(i)).collect();
        let recall = hits.iter().filter(|&&h| h).count() as f64 / relevant.len() as f64;
        let mut dcg = 0.0;
        for (r, &h) in hits.iter().enumerate() {
            if h {
                dcg += 1.0 / ((r + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for r in 0..relevant.len().min(k) {
            idcg += 1.0 / ((r + 2) as f64).log2();
        }
        let ndcg = dcg / idcg;
        if ranked != want
            || recall_at_k(&ranked, &relevant, k).unwrap() != recall
            || ndcg_at_k(&ranked, &relevant, k).unwrap() != ndcg
        {
            mismatches += 1;
        }
    }
    let rank2 = ndcg_at_k(&[0, 1], &[1], 20).unwrap();
    let rank2_err = (rank2 - 1.0 / 3f64.log2()).abs();
    Outcome {
        pass: mismatches == 0 && rank2_err < 1e-12,
        detail: format!("{mismatches} mismatches in {cases} instances, rank-2 NDCG error {rank2_err:.1e}"),
    }
}

// ---------------------------------------------------------------------------
// 5 and 6. synthetic drift benchmark

struct SeedRuns {
    seed: u64,
    no_retrain: Vec<f64>,
    aggregate: [f64; 3],
    no_retrain_time: Duration,
}

fn benchmark(seeds: &[u64]) -> Vec<SeedRuns> {
    let base = ExperimentConfig::parse("data = synthetic\nperiods = 6\n").unwrap();
    seeds
        .iter()
        .map(|&seed| {
            let config = base.clone().with_seed(seed);
            let start = Instant::now();
            let data: Dataset = prepare(load_data(&config, None).unwrap(), &config).unwrap();
            let data_time = start.elapsed();
            let mut aggregate = [0.0; 3];
            let mut no_retrain = Vec::new();
            let mut no_retrain_time = data_time;
            for (slot, strategy) in [Strategy::Dil, Strategy::FineTune, Strategy::NoRetrain].into_iter().enumerate() {
                let c = config.clone().with_strategy(strategy);
                let start = Instant::now();
                let run = run_stages(&data, &c, |_, _| Ok(())).unwrap();
                aggregate[slot] = run.report.aggregate.recall;
                if strategy == Strategy::NoRetrain {
                    no_retrain = run.all_periods.iter().map(|p| p.recall).collect();
                    no_retrain_time += start.elapsed();
                }
            }
            SeedRuns {
                seed,
                no_retrain,
                aggregate,
                no_retrain_time,
            }
        })
        .collect()
}

fn criterion_decay(runs: &[SeedRuns]) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let monotone = r.no_retrain.windows(2).all(|w| w[1] <= w[0]);
        ok += monotone as usize;
        let seq: Vec<String> = r.no_retrain.iter().map(|v| format!("{v:.4}")).collect();
        parts.push(format!("seed {} [{}]{}", r.seed, seq.join(" "), if monotone { "" } else { " rises" }));
    }
    let time: Duration = runs.iter().map(|r| r.no_retrain_time).sum();
    Outcome {
        pass: ok >= 4 && time <= Duration::from_secs(600),
        detail: format!(
            "no_retrain Recall@20 over periods 1..5 non-increasing in {ok}/5 seeds (need 4), no_retrain runtime {:.0}s; {}",
            time.as_secs_f64(),
            parts.join("; ")
        ),
    }
}

fn criterion_ordering(runs: &[SeedRuns]) -> Outcome {
    let ordered = runs.iter().filter(|r| r.aggregate[0] >= r.aggregate[1] && r.aggregate[1] >= r.aggregate[2]).count();
    let strict = runs.iter().filter(|r| r.aggregate[0] > r.aggregate[2]).count();
    let parts: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} dil {:.4} fine_tune {:.4} no_retrain {:.4}",
                r.seed, r.aggregate[0], r.aggregate[1], r.aggregate[2]
            )
        })
        .collect();
    Outcome {
        pass: ordered >= 4 && strict == runs.len(),
        detail: format!(
            "dil >= fine_tune >= no_retrain in {ordered}/5 seeds (need 4), dil > no_retrain in {strict}/5 (need 5); {}",
            parts.join("; ")
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. loss reduction

fn criterion_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let t = toy(&mut rng);
        let n = t.users + t.items;
        let quads: Vec<TrainingQuad> = t.quads.iter().map(|q| TrainingQuad { hist: None, ..*q }).collect();
        let batch = BatchNodes::from_quads(&quads, t.users);
        let mut tape = Tape::new();
        let finals = tape.param(uniform(n, t.dim, &mut rng));
        let emb = tape.param(uniform(n, t.dim, &mut rng));
        let e_hist = tape.param(uniform(n, t.dim, &mut rng));
        let inputs = ObjectiveInputs {
            finals,
            embeddings: emb,
            e_hist: Some(e_hist),
            e_extract: None,
            dense: &[],
        };
        let out = total_loss(&mut tape, &batch, inputs, LossWeights { lambda: 0.0, l2: 0.0 }, &mut rng).unwrap();
        let u = tape.gather_rows(finals, &batch.users).unwrap();
        let i = tape.gather_rows(finals, &batch.pos).unwrap();
        let j = tape.gather_rows(finals, &batch.neg).unwrap();
        let pos = tape.row_dot(u, i).unwrap();
        let neg = tape.row_dot(u, j).unwrap();
        let bpr = bpr_loss(&mut tape, pos, neg).unwrap();
        worst = worst.max((tape.value(out.total).item() - tape.value(bpr).item()).abs());
    }

    // no_retrain hands back the previous parameters untouched
    let records: Vec<Interaction> = (0..40)
        .map(|t| Interaction {
            user: t % 8,
            item: (t * 3) % 8,
            timestamp: t as i64,
        })
        .collect();
    let config = TrainConfig {
        max_epochs: 5,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        dim: 4,
        ..ModelConfig::default()
    };
    let warm = train_warmup(
        &WarmupContext {
            universe: (8, 8),
            known: (8, 8),
            records: &records[..20],
            validation: &records[20..22],
        },
        &model,
        &config,
    )
    .unwrap();
    let ctx = RetrainContext {
        period: 0,
        universe: (8, 8),
        known: (8, 8),
        current: &records[20..],
        history: &records[..20],
        seen: &records,
        validation: &[],
    };
    let out = retrain_period(
        &ctx,
        &warm,
        &TrainConfig {
            strategy: Strategy::NoRetrain,
            ..config
        },
    )
    .unwrap();
    let identical = bit_identical(&out, &warm);
    Outcome {
        pass: worst < 1e-12 && identical,
        detail: format!("|total - bpr| max {worst:.1e} < 1e-12 over 50 batches, no_retrain bit-identical {identical}"),
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.values().iter().map(|v| v.to_bits()).collect()
}

fn bit_identical(a: &Trained, b: &Trained) -> bool {
    let (na, nb) = (a.model.named(), b.model.named());
    na.len() == nb.len() && na.iter().zip(&nb).all(|((x, s), (y, t))| x == y && bits(s) == bits(t))
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

fn criterion_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = "data = synthetic\nperiods = 4\nsynth_users = 300\nsynth_items = 120\nsynth_interactions = 3000\ndim = 16\n";
    let config = |name: &str, strategy: Strategy| {
        ExperimentConfig::parse(text)
            .unwrap()
            .with_seed(8)
            .with_strategy(strategy)
            .with_out(dir.path().join(name))
    };
    let mut same_reports = true;
    let mut resumed = true;
    for strategy in [Strategy::Dil, Strategy::FineTune] {
        let name = strategy.to_string();
        let (a, b) = (config(&format!("{name}-a"), strategy), config(&format!("{name}-b"), strategy));
        let ra = run_pipeline(&a).unwrap();
        run_pipeline(&b).unwrap();
        let read = |c: &ExperimentConfig| std::fs::read(c.out.join("report.json")).unwrap();
        same_reports &= read(&a) == read(&b);
        resumed &= evaluate_run(&a.out).unwrap() == ra.report;
    }

    // save every stage, reload, compare bit by bit
    let c = config("stages", Strategy::Dil);
    let data = prepare(load_data(&c, None).unwrap(), &c).unwrap();
    let mut round_trips = 0;
    let mut failures = 0;
    run_stages(&data, &c, |stage, trained| {
        let tag = stage.map_or("warmup".to_string(), |n| n.to_string());
        let (mp, sp) = (dir.path().join(format!("{tag}.m")), dir.path().join(format!("{tag}.s")));
        save_model(&mp, &trained.model)?;
        save_snapshot(&sp, &trained.snapshot)?;
        let model = load_model(&mp, &c.model, c.train.aggregation)?;
        let snapshot = load_snapshot(&sp)?;
        let same_model = model.named().iter().zip(trained.model.named()).all(|((x, s), (y, t))| *x == y && bits(s) == bits(t))
            && model.named().len() == trained.model.named().len();
        let same_snapshot = snapshot.layers().iter().zip(trained.snapshot.layers()).all(|(s, t)| bits(s) == bits(t))
            && bits(snapshot.final_rep()) == bits(trained.snapshot.final_rep());
        round_trips += 1;
        failures += (!(same_model && same_snapshot)) as usize;
        Ok(())
    })
    .unwrap();
    Outcome {
        pass: same_reports && resumed && failures == 0,
        detail: format!(
            "identical report bytes {same_reports}, reload reproduces metrics {resumed}, {round_trips} stage checkpoints, {failures} not bit-exact"
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut pass = true;
    pass &= check(1, "gradient correctness", secs(30), criterion_gradients);
    pass &= check(2, "propagation oracle", secs(10), criterion_propagation);
    pass &= check(3, "distance-correlation properties", secs(10), criterion_dcorr);
    pass &= check(4, "metric oracle", secs(10), criterion_metrics);
    let start = Instant::now();
    let runs = benchmark(&[0, 1, 2, 3, 4]);
    let bench_time = start.elapsed();
    pass &= check(5, "no_retrain decay on drift data", secs(600), || criterion_decay(&runs));
    pass &= check(6, "strategy ordering on drift data", secs(1800), || {
        let mut out = criterion_ordering(&runs);
        out.pass &= bench_time <= secs(1800);
        out.detail = format!("benchmark runtime {:.0}s; {}", bench_time.as_secs_f64(), out.detail);
        out
    });
    pass &= check(7, "loss reduction identity", secs(30), criterion_reduction);
    pass &= check(8, "determinism and persistence", secs(300), criterion_persistence);
    if !pass {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

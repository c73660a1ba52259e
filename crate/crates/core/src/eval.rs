//! All-item top-K ranking and the Recall/NDCG metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{DataError, Interaction};
use crate::tensor::Tensor;

/// Smallest period that can be split into validation and test slices.
pub const MIN_PERIOD_LEN: usize = 10;

/// Users to rank for, their relevant items, and per-user exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTask {
    /// `(user, relevant items)`, ascending by user; item lists sorted.
    pub relevant: Vec<(usize, Vec<usize>)>,
    /// Candidates are items `0..candidate_items`.
    pub candidate_items: usize,
    /// Sorted items to drop from a user's candidates; empty when exclusion
    /// is off.
    pub excluded: Vec<Vec<usize>>,
}

impl RankingTask {
    fn excluded_for(&self, user: usize) -> &[usize] {
        self.excluded.get(user).map_or(&[], Vec::as_slice)
    }
}

/// Top `k` candidate items by dot product, ties broken by ascending index.
pub fn rank_items(user: &[f64], items: &Tensor, candidates: usize, excluded: &[usize], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..candidates)
        .filter(|i| excluded.binary_search(i).is_err())
        // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
        .map(|i| (crate::models::score(user, items.row(i)) + 0.0, i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Ranked lists for every user of the task, in task order.
pub fn rank_topk(users: &Tensor, items: &Tensor, task: &RankingTask, k: usize) -> Vec<Vec<usize>> {
    assert!(k >= 1, "k must be positive");
    task.relevant
        .par_iter()
        .map(|(u, _)| rank_items(users.row(*u), items, task.candidate_items, task.excluded_for(*u), k))
        .collect()
}

fn check_relevant(relevant: &[usize]) -> Result<(), DataError> {
    if relevant.is_empty() {
        return Err(DataError::Invalid("empty relevant set".into()));
    }
    Ok(())
}

pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64, DataError> {
    check_relevant(relevant)?;
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64, DataError> {
    check_relevant(relevant)?;
    let gain = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(gain).sum();
    Ok(dcg / idcg)
}

/// Splits a period into its leading validation slice (10%, at least one
/// record) and the test remainder. Records must be in time order.
pub fn split_validation(records: &[Interaction]) -> Result<(&[Interaction], &[Interaction]), DataError> {
    if records.len() < MIN_PERIOD_LEN {
        return Err(DataError::Invalid(format!(
            "period has {} records; at least {MIN_PERIOD_LEN} are needed to split off validation",
            records.len()
        )));
    }
    let cut = (records.len() / 10).max(1);
    Ok(records.split_at(cut))
}

/// What the evaluated model knew and which items each user already consumed.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    /// Users and items known by the end of training.
    pub known_users: usize,
    pub known_items: usize,
    /// Training-time interactions, used for exclusion.
    pub seen: &'a [Interaction],
    pub exclude_seen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub index: usize,
    /// Metrics at the first configured cutoff.
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    pub unseen_users: usize,
    pub unseen_items: usize,
    /// Remaining cutoffs, when more than one is configured.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<CutoffMetrics>,
}

/// Builds the ranking task for `targets`. Relevant items are the target
/// items a user can be recommended: known to the model and not excluded.
pub fn build_task(targets: &[Interaction], ctx: &EvalContext<'_>) -> (RankingTask, usize, usize) {
    let max_user = targets.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let mut excluded = Vec::new();
    if ctx.exclude_seen {
        excluded = vec![Vec::new(); max_user.max(ctx.known_users)];
        for r in ctx.seen {
            if r.user < excluded.len() {
                excluded[r.user].push(r.item);
            }
        }
        for e in &mut excluded {
            e.sort_unstable();
            e.dedup();
        }
    }
    let mut per_user = vec![Vec::new(); max_user];
    let mut unseen_items: Vec<usize> = Vec::new();
    for r in targets {
        if r.item >= ctx.known_items {
            unseen_items.push(r.item);
            continue;
        }
        if excluded.get(r.user).is_some_and(|e| e.binary_search(&r.item).is_ok()) {
            continue;
        }
        per_user[r.user].push(r.item);
    }
    unseen_items.sort_unstable();
    unseen_items.dedup();
    let mut unseen_users: Vec<usize> = targets.iter().map(|r| r.user).filter(|&u| u >= ctx.known_users).collect();
    unseen_users.sort_unstable();
    unseen_users.dedup();
    let relevant = per_user
        .into_iter()
        .enumerate()
        .filter_map(|(u, mut items)| {
            items.sort_unstable();
            items.dedup();
            (!items.is_empty()).then_some((u, items))
        })
        .collect();
    let task = RankingTask {
        relevant,
        candidate_items: ctx.known_items,
        excluded,
    };
    (task, unseen_users.len(), unseen_items.len())
}

/// Macro-averaged metrics of `targets` at each cutoff in `ks`.
pub fn evaluate_targets(
    users: &Tensor,
    items: &Tensor,
    targets: &[Interaction],
    ctx: &EvalContext<'_>,
    ks: &[usize],
    index: usize,
) -> Result<PeriodMetrics, DataError> {
    let max_k = *ks.iter().max().ok_or_else(|| DataError::Invalid("no cutoffs".into()))?;
    if ks.contains(&0) {
        return Err(DataError::Invalid("cutoffs must be positive".into()));
    }
    let (task, unseen_users, unseen_items) = build_task(targets, ctx);
    let ranked = rank_topk(users, items, &task, max_k);
    let mut cutoffs = Vec::with_capacity(ks.len());
    let n = task.relevant.len();
    for &k in ks {
        let (mut recall, mut ndcg) = (0.0, 0.0);
        // fixed user order keeps the sums deterministic
        for ((_, relevant), list) in task.relevant.iter().zip(&ranked) {
            recall += recall_at_k(list, relevant, k)?;
            ndcg += ndcg_at_k(list, relevant, k)?;
        }
        let denom = n.max(1) as f64;
        cutoffs.push(CutoffMetrics {
            k,
            recall: recall / denom,
            ndcg: ndcg / denom,
        });
    }
    let first = cutoffs.remove(0);
    Ok(PeriodMetrics {
        index,
        recall: first.recall,
        ndcg: first.ndcg,
        users_evaluated: n,
        unseen_users,
        unseen_items,
        extra: cutoffs,
    })
}

/// Evaluates on the test part (last 90%) of a period.
pub fn evaluate_period(
    users: &Tensor,
    items: &Tensor,
    period: &[Interaction],
    ctx: &EvalContext<'_>,
    ks: &[usize],
    index: usize,
) -> Result<PeriodMetrics, DataError> {
    let (_, test) = split_validation(period)?;
    evaluate_targets(users, items, test, ctx, ks, index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub strategy: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: RunInfo,
    pub periods: Vec<PeriodMetrics>,
    pub aggregate: Aggregate,
}

/// Averages per-period metrics.
pub fn aggregate_report(run: RunInfo, periods: Vec<PeriodMetrics>) -> MetricsReport {
    let n = periods.len().max(1) as f64;
    let recall = periods.iter().map(|p| p.recall).sum::<f64>() / n;
    let ndcg = periods.iter().map(|p| p.ndcg).sum::<f64>() / n;
    MetricsReport {
        run,
        periods,
        aggregate: Aggregate { recall, ndcg },
    }
}

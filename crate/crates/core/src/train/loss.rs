use rand::Rng;

use crate::disentangle::{dcorr_loss, select_population, DcorrBatch, POPULATION_CAP};
use crate::graph::TrainingQuad;
use crate::tensor::{Result, Tape, TensorError, Var};

/// Mean of `-ln σ(pos - neg)`, computed as `softplus(neg - pos)`.
pub fn bpr_loss(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    let diff = tape.sub(neg, pos)?;
    let sp = tape.softplus(diff)?;
    tape.mean(sp)
}

/// Node indices of a batch of quads in the stacked node space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchNodes {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
    /// `(u, k, j)` for quads that carry a historical positive.
    pub hist: Vec<(usize, usize, usize)>,
}

impl BatchNodes {
    pub fn from_quads(quads: &[TrainingQuad], user_count: usize) -> Self {
        let mut b = BatchNodes::default();
        for q in quads {
            let (u, i, j) = (q.user, user_count + q.pos, user_count + q.neg);
            b.users.push(u);
            b.pos.push(i);
            b.neg.push(j);
            if let Some(k) = q.hist {
                b.hist.push((u, user_count + k, j));
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Every node the batch touches, with multiplicity.
    pub fn touched(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(3 * self.len());
        rows.extend(&self.users);
        rows.extend(&self.pos);
        rows.extend(&self.neg);
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub l2: f64,
}

/// Tape variables the objective reads.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    /// Final representations of every node.
    pub finals: Var,
    /// Learnable base table (`e_new` under DIL).
    pub embeddings: Var,
    pub e_hist: Option<Var>,
    pub e_extract: Option<Var>,
    pub dense: &'a [Var],
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: Var,
    pub bpr: f64,
    pub hist: f64,
    pub dcorr: f64,
    pub l2: f64,
    pub dcorr_skipped: usize,
}

fn pair_scores(tape: &mut Tape, table: Var, left: &[usize], right: &[usize]) -> Result<Var> {
    let a = tape.gather_rows(table, left)?;
    let b = tape.gather_rows(table, right)?;
    tape.row_dot(a, b)
}

fn squared_norm(tape: &mut Tape, v: Var) -> Result<Var> {
    let sq = tape.mul(v, v)?;
    tape.sum(sq)
}

/// Full retraining objective: BPR on final representations, BPR on
/// historical embeddings for quads with a historical positive, weighted
/// distance correlation between historical and new embeddings, and L2.
/// Without `e_hist` only the first and last terms remain.
pub fn total_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    batch: &BatchNodes,
    inputs: ObjectiveInputs<'_>,
    weights: LossWeights,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(TensorError::InvalidArgument("empty batch".into()));
    }
    let pos = pair_scores(tape, inputs.finals, &batch.users, &batch.pos)?;
    let neg = pair_scores(tape, inputs.finals, &batch.users, &batch.neg)?;
    let bpr = bpr_loss(tape, pos, neg)?;
    let bpr_value = tape.value(bpr).item();
    let mut total = bpr;

    let mut hist_value = 0.0;
    let mut dcorr_value = 0.0;
    let mut dcorr_skipped = 0;
    if let Some(e_hist) = inputs.e_hist {
        if !batch.hist.is_empty() {
            let (u, k, j): (Vec<usize>, Vec<usize>, Vec<usize>) = {
                let mut t = (Vec::new(), Vec::new(), Vec::new());
                for &(u, k, j) in &batch.hist {
                    t.0.push(u);
                    t.1.push(k);
                    t.2.push(j);
                }
                t
            };
            let hp = pair_scores(tape, e_hist, &u, &k)?;
            let hn = pair_scores(tape, e_hist, &u, &j)?;
            let h = bpr_loss(tape, hp, hn)?;
            hist_value = tape.value(h).item();
            total = tape.add(total, h)?;
        }
        if weights.lambda > 0.0 {
            let users = select_population(&batch.users, POPULATION_CAP, rng);
            let items: Vec<usize> = batch.pos.iter().chain(&batch.neg).copied().collect();
            let items = select_population(&items, POPULATION_CAP, rng);
            let mut batches = Vec::with_capacity(2);
            for rows in [users, items] {
                if rows.len() < 2 {
                    batches.push(None);
                    continue;
                }
                let x = tape.gather_rows(e_hist, &rows)?;
                let y = tape.gather_rows(inputs.embeddings, &rows)?;
                batches.push(Some(DcorrBatch { x, y }));
            }
            let d = dcorr_loss(tape, &batches)?;
            dcorr_skipped = d.skipped;
            if let Some(loss) = d.loss {
                dcorr_value = tape.value(loss).item();
                let weighted = tape.scale(loss, weights.lambda)?;
                total = tape.add(total, weighted)?;
            }
        }
    }

    let mut l2_value = 0.0;
    if weights.l2 > 0.0 {
        let rows = batch.touched();
        let mut terms = Vec::new();
        let e = tape.gather_rows(inputs.embeddings, &rows)?;
        terms.push(squared_norm(tape, e)?);
        if let Some(x) = inputs.e_extract {
            let x = tape.gather_rows(x, &rows)?;
            terms.push(squared_norm(tape, x)?);
        }
        for &w in inputs.dense {
            terms.push(squared_norm(tape, w)?);
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        let reg = tape.scale(acc, weights.l2 / batch.len() as f64)?;
        l2_value = tape.value(reg).item();
        total = tape.add(total, reg)?;
    }

    let value = tape.value(total).item();
    if !value.is_finite() {
        return Err(TensorError::Domain {
            op: "loss",
            index: 0,
            value,
        });
    }
    Ok(LossBreakdown {
        total,
        bpr: bpr_value,
        hist: hist_value,
        dcorr: dcorr_value,
        l2: l2_value,
        dcorr_skipped,
    })
}

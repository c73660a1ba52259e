//! Fusion of historical and new embeddings, and the distance-correlation
//! penalty that pushes the two populations apart.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::{Result, Tape, TensorError, Var};

/// Largest population a single distance-correlation term is computed over.
pub const POPULATION_CAP: usize = 256;

/// `h0 = e_hist + e_new`.
pub fn fuse_initial(tape: &mut Tape, e_hist: Var, e_new: Var) -> Result<Var> {
    tape.add(e_hist, e_new)
}

/// Row-aligned samples of historical (`x`) and new (`y`) embeddings.
#[derive(Debug, Clone, Copy)]
pub struct DcorrBatch {
    pub x: Var,
    pub y: Var,
}

fn rows_identical(tape: &Tape, v: Var) -> bool {
    let t = tape.value(v);
    let first = t.row(0);
    (1..t.rows()).all(|r| {
        let sq: f64 = t.row(r).iter().zip(first).map(|(a, b)| (a - b) * (a - b)).sum();
        sq <= 1e-24
    })
}

/// Distance correlation of the row populations of `batch.x` and `batch.y`,
/// in `[0, 1]`. Row counts must agree; column counts may differ.
pub fn distance_correlation(tape: &mut Tape, batch: DcorrBatch) -> Result<Var> {
    let (xv, yv) = (tape.value(batch.x), tape.value(batch.y));
    if xv.shape().len() != 2 || yv.shape().len() != 2 || xv.rows() != yv.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "distance_correlation",
            left: xv.shape().to_vec(),
            right: yv.shape().to_vec(),
        });
    }
    if xv.rows() < 2 {
        return Err(TensorError::InvalidArgument(format!(
            "distance correlation needs at least 2 rows, got {}",
            xv.rows()
        )));
    }
    if rows_identical(tape, batch.x) || rows_identical(tape, batch.y) {
        return Err(TensorError::InvalidArgument(
            "degenerate batch: all rows identical".into(),
        ));
    }
    let a = tape.pairwise_distance(batch.x)?;
    let a = tape.double_center(a)?;
    let b = tape.pairwise_distance(batch.y)?;
    let b = tape.double_center(b)?;

    let mut v_statistic = |p: Var, q: Var| -> Result<Var> {
        let prod = tape.mul(p, q)?;
        let m = tape.mean(prod)?;
        // rounding can leave a tiny negative value
        tape.clamp(m, 0.0, f64::INFINITY)
    };
    let dcov2 = v_statistic(a, b)?;
    let dvar_x = v_statistic(a, a)?;
    let dvar_y = v_statistic(b, b)?;

    let dcov = tape.sqrt_eps(dcov2)?;
    let sx = tape.sqrt_eps(dvar_x)?;
    let sy = tape.sqrt_eps(dvar_y)?;
    let denom = tape.mul(sx, sy)?;
    let denom = tape.sqrt_eps(denom)?;
    let ratio = tape.div(dcov, denom)?;
    tape.clamp(ratio, 0.0, 1.0)
}

/// Sum of per-population distance correlations.
#[derive(Debug, Clone, Copy)]
pub struct DcorrLoss {
    /// `None` when every population was empty or degenerate.
    pub loss: Option<Var>,
    pub skipped: usize,
}

impl DcorrLoss {
    pub fn value(&self, tape: &Tape) -> f64 {
        self.loss.map_or(0.0, |v| tape.value(v).item())
    }
}

/// Sums distance correlation over the given populations. Populations with
/// fewer than two rows or identical rows contribute zero.
pub fn dcorr_loss(tape: &mut Tape, batches: &[Option<DcorrBatch>]) -> Result<DcorrLoss> {
    let mut loss: Option<Var> = None;
    let mut skipped = 0;
    for batch in batches.iter().flatten() {
        if tape.value(batch.x).rows() < 2 {
            skipped += 1;
            continue;
        }
        match distance_correlation(tape, *batch) {
            Ok(v) => {
                loss = Some(match loss {
                    Some(acc) => tape.add(acc, v)?,
                    None => v,
                });
            }
            Err(TensorError::InvalidArgument(msg)) => {
                log::debug!("skipping decorrelation term: {msg}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DcorrLoss { loss, skipped })
}

/// Distinct ids in first-appearance order, uniformly subsampled to `cap`.
pub fn select_population<R: Rng + ?Sized>(ids: &[usize], cap: usize, rng: &mut R) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let distinct: Vec<usize> = ids.iter().copied().filter(|id| seen.insert(*id)).collect();
    if distinct.len() <= cap {
        return distinct;
    }
    let mut picked: Vec<usize> = sample(rng, distinct.len(), cap).into_iter().collect();
    picked.sort_unstable();
    picked.into_iter().map(|k| distinct[k]).collect()
}

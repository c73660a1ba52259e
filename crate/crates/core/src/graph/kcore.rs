use super::{DataError, InteractionLog, Result};

/// Drops users and items with fewer than `k` interactions until every
/// remaining user and item has at least `k`. The result is re-indexed.
pub fn k_core_filter(log: &InteractionLog, k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(DataError::Invalid("k-core filter needs k >= 1".into()));
    }
    let mut alive = vec![true; log.len()];
    loop {
        let mut user_deg = vec![0usize; log.user_count()];
        let mut item_deg = vec![0usize; log.item_count()];
        for (r, _) in log.records().iter().zip(&alive).filter(|(_, &a)| a) {
            user_deg[r.user] += 1;
            item_deg[r.item] += 1;
        }
        let mut changed = false;
        for (r, a) in log.records().iter().zip(alive.iter_mut()) {
            if *a && (user_deg[r.user] < k || item_deg[r.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<_> = log
        .to_records()
        .into_iter()
        .zip(&alive)
        .filter_map(|(r, &a)| a.then_some(r))
        .collect();
    if kept.is_empty() {
        return Err(DataError::EmptyAfterFilter { k });
    }
    InteractionLog::from_records(kept)
}

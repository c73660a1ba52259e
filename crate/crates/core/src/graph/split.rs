use std::ops::Range;

use super::{DataError, Interaction, InteractionLog, Result};

/// Warm-up window plus consecutive half-open retraining windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSplit {
    pub warmup: Range<usize>,
    pub periods: Vec<Range<usize>>,
    /// `boundaries[p]..boundaries[p + 1]` is the time span of period `p`.
    pub boundaries: Vec<i64>,
    /// Records after the last period, excluded from every window.
    pub dropped: usize,
    /// Users and items seen up to the end of the warm-up (`known[0]`) and up
    /// to the end of each period (`known[p + 1]`).
    known: Vec<(usize, usize)>,
}

impl PeriodSplit {
    pub fn period_count(&self) -> usize {
        self.periods.len()
    }

    pub fn warmup_records<'a>(&self, log: &'a InteractionLog) -> &'a [Interaction] {
        &log.records()[self.warmup.clone()]
    }

    pub fn period_records<'a>(&self, log: &'a InteractionLog, p: usize) -> &'a [Interaction] {
        &log.records()[self.periods[p].clone()]
    }

    /// All records strictly before period `p` (warm-up included).
    pub fn records_before<'a>(&self, log: &'a InteractionLog, p: usize) -> &'a [Interaction] {
        &log.records()[self.warmup.start..self.periods[p].start]
    }

    /// All records up to and including period `p`.
    pub fn records_through<'a>(&self, log: &'a InteractionLog, p: usize) -> &'a [Interaction] {
        &log.records()[self.warmup.start..self.periods[p].end]
    }

    /// `(users, items)` seen by the end of the warm-up.
    pub fn known_after_warmup(&self) -> (usize, usize) {
        self.known[0]
    }

    /// `(users, items)` seen by the end of period `p`.
    pub fn known_after(&self, p: usize) -> (usize, usize) {
        self.known[p + 1]
    }

    /// `(users, items)` seen before period `p` starts.
    pub fn known_before(&self, p: usize) -> (usize, usize) {
        self.known[p]
    }
}

/// Splits `log` into a warm-up (`t < warmup_end`) and `period_count`
/// windows of `period_length` seconds each.
pub fn split_by_time(
    log: &InteractionLog,
    warmup_end: i64,
    period_length: i64,
    period_count: usize,
) -> Result<PeriodSplit> {
    if period_count < 2 {
        return Err(DataError::InvalidSplit(format!(
            "need at least 2 periods, got {period_count}"
        )));
    }
    if period_length <= 0 {
        return Err(DataError::InvalidSplit(format!(
            "period length must be positive, got {period_length}"
        )));
    }
    let records = log.records();
    let lower = |t: i64| records.partition_point(|r| r.timestamp < t);
    let boundaries: Vec<i64> = (0..=period_count as i64).map(|p| warmup_end + p * period_length).collect();
    let warmup = 0..lower(warmup_end);
    if warmup.is_empty() {
        return Err(DataError::InvalidSplit(format!(
            "warm-up window is empty: first interaction at {} is not before {warmup_end}",
            log.first_timestamp()
        )));
    }
    let periods: Vec<Range<usize>> = boundaries.windows(2).map(|w| lower(w[0])..lower(w[1])).collect();
    if let Some(index) = periods.iter().position(|r| r.is_empty()) {
        return Err(DataError::EmptyPeriod { index });
    }
    let end = periods.last().expect("period_count >= 2").end;
    let dropped = records.len() - end;
    if dropped > 0 {
        log::info!("{dropped} interactions after the last period were dropped");
    }
    let mut known = vec![log.known_counts(warmup.end)];
    known.extend(periods.iter().map(|r| log.known_counts(r.end)));
    Ok(PeriodSplit {
        warmup,
        periods,
        boundaries,
        dropped,
        known,
    })
}

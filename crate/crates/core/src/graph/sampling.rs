use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{DataError, Interaction, Result};

/// `(u, i, k, j)`: user, current positive, historical positive (if the user
/// has history) and a negative shared by both ranking terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingQuad {
    pub user: usize,
    pub pos: usize,
    pub hist: Option<usize>,
    pub neg: usize,
}

/// Per-user item sets of strictly earlier windows. Reads are counted so
/// tests can assert which strategies consult history.
#[derive(Debug)]
struct HistoryIndex {
    items: Vec<Vec<usize>>,
    reads: AtomicUsize,
}

impl HistoryIndex {
    fn get(&self, user: usize) -> &[usize] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.items.get(user).map_or(&[], Vec::as_slice)
    }
}

/// Positive pairs of a training window plus the indices needed to draw
/// historical positives and negatives.
#[derive(Debug)]
pub struct TrainingSet {
    positives: Vec<(usize, usize)>,
    current: Vec<Vec<usize>>,
    history: Option<HistoryIndex>,
    item_pool: usize,
}

fn per_user(records: &[Interaction], user_count: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); user_count];
    for r in records {
        sets[r.user].push(r.item);
    }
    for s in &mut sets {
        s.sort_unstable();
        s.dedup();
    }
    sets
}

impl TrainingSet {
    /// `current` supplies positives; `history`, when given, supplies the
    /// historical positives and widens the negative exclusion. Negatives are
    /// drawn from items `0..item_pool`.
    pub fn new(
        current: &[Interaction],
        history: Option<&[Interaction]>,
        user_count: usize,
        item_pool: usize,
    ) -> Self {
        let mut positives: Vec<(usize, usize)> = Vec::with_capacity(current.len());
        let cur = per_user(current, user_count);
        let mut emitted = vec![Vec::<usize>::new(); user_count];
        for r in current {
            // first occurrence of each pair, in log order
            if let Err(pos) = emitted[r.user].binary_search(&r.item) {
                emitted[r.user].insert(pos, r.item);
                positives.push((r.user, r.item));
            }
        }
        Self {
            positives,
            current: cur,
            history: history.map(|h| HistoryIndex {
                items: per_user(h, user_count),
                reads: AtomicUsize::new(0),
            }),
            item_pool,
        }
    }

    pub fn positives(&self) -> &[(usize, usize)] {
        &self.positives
    }

    pub fn user_count(&self) -> usize {
        self.current.len()
    }

    pub fn item_pool(&self) -> usize {
        self.item_pool
    }

    pub fn has_history(&self) -> bool {
        self.history.is_some()
    }

    /// Number of lookups made into the historical-positives index.
    pub fn history_reads(&self) -> usize {
        self.history.as_ref().map_or(0, |h| h.reads.load(Ordering::Relaxed))
    }

    pub fn current_items(&self, user: usize) -> &[usize] {
        &self.current[user]
    }

    fn interacted(&self, user: usize, item: usize, history: &[usize]) -> bool {
        self.current[user].binary_search(&item).is_ok() || history.binary_search(&item).is_ok()
    }

    fn sample_negative<R: Rng + ?Sized>(&self, user: usize, history: &[usize], rng: &mut R) -> Result<usize> {
        if self.item_pool == 0 {
            return Err(DataError::NoNegative { user });
        }
        for _ in 0..64 {
            let j = rng.random_range(0..self.item_pool);
            if !self.interacted(user, j, history) {
                return Ok(j);
            }
        }
        let pool: Vec<usize> = (0..self.item_pool)
            .filter(|&j| !self.interacted(user, j, history))
            .collect();
        pool.choose(rng).copied().ok_or(DataError::NoNegative { user })
    }

    /// Completes a quad for a given positive pair.
    pub fn quad_for<R: Rng + ?Sized>(&self, user: usize, pos: usize, rng: &mut R) -> Result<TrainingQuad> {
        let history: &[usize] = match &self.history {
            Some(h) => h.get(user),
            None => &[],
        };
        let hist = history.choose(rng).copied();
        let neg = self.sample_negative(user, history, rng)?;
        Ok(TrainingQuad { user, pos, hist, neg })
    }

    /// Draws `i` uniformly from the user's current items, then completes the quad.
    pub fn sample_quad<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<TrainingQuad> {
        let pos = *self
            .current
            .get(user)
            .and_then(|items| items.choose(rng))
            .ok_or(DataError::NoPositive { user })?;
        self.quad_for(user, pos, rng)
    }

    /// One epoch: every positive pair once, shuffled, with fresh `k` and `j`.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<TrainingQuad>> {
        let mut order = self.positives.clone();
        order.shuffle(rng);
        order.into_iter().map(|(u, i)| self.quad_for(u, i, rng)).collect()
    }
}

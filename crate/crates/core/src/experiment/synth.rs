//! Synthetic interaction streams with drifting user preferences.
//!
//! Items have fixed latent vectors. A user's latent vector mixes a stable
//! long-term part with a drifting part that takes one step per phase: a
//! trend direction shared by all users and phases plus per-user noise,
//! scaled by the drift magnitude. Interactions are drawn from a softmax
//! over latent dot products, never repeating an item for the same user.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::{write_interactions, DataError, InteractionRecord};

/// Time span of the warm-up window and of each period.
pub const WINDOW_LENGTH: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDriftSpec {
    pub user_count: usize,
    pub item_count: usize,
    /// Latent dimension.
    pub dim: usize,
    /// Phases spread evenly over the warm-up and the periods.
    pub phases: usize,
    /// Length of each per-phase drift step.
    pub drift: f64,
    /// Weight of the stable part in `[0, 1]`.
    pub stable_weight: f64,
    /// Scale of the softmax logits.
    pub strength: f64,
    pub interactions_per_period: usize,
    /// Periods after the warm-up window.
    pub periods: usize,
    pub seed: u64,
}

impl Default for SyntheticDriftSpec {
    fn default() -> Self {
        Self {
            user_count: 2000,
            item_count: 500,
            dim: 16,
            phases: 7,
            drift: 1.0,
            stable_weight: 0.5,
            strength: 4.0,
            interactions_per_period: 20_000,
            periods: 6,
            seed: 0,
        }
    }
}

impl SyntheticDriftSpec {
    /// Returns the offending config key on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let checks: [(&'static str, bool, &str); 9] = [
            ("synth_users", self.user_count > 0, "must be >= 1"),
            ("synth_items", self.item_count > 1, "must be >= 2"),
            ("synth_dim", self.dim > 0, "must be >= 1"),
            ("synth_phases", self.phases > 0, "must be >= 1"),
            ("synth_drift", self.drift.is_finite() && self.drift >= 0.0, "must be >= 0"),
            (
                "synth_stable",
                (0.0..=1.0).contains(&self.stable_weight),
                "must lie in [0, 1]",
            ),
            ("synth_strength", self.strength.is_finite() && self.strength >= 0.0, "must be >= 0"),
            (
                "synth_interactions",
                self.interactions_per_period > 0 && (self.interactions_per_period as i64) < WINDOW_LENGTH,
                "must be >= 1 and below the window length",
            ),
            ("periods", self.periods > 0, "must be >= 1"),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err((key, msg.to_string()));
            }
        }
        Ok(())
    }

    fn phase_of(&self, window: usize) -> usize {
        window * self.phases / (self.periods + 1)
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Per-user latent vectors for every phase.
fn user_latents<R: Rng + ?Sized>(spec: &SyntheticDriftSpec, rng: &mut R) -> Vec<Vec<Vec<f64>>> {
    let d = spec.dim;
    let stable: Vec<Vec<f64>> = (0..spec.user_count).map(|_| normalized(normal_vec(rng, d))).collect();
    let mut drifting: Vec<Vec<f64>> = (0..spec.user_count).map(|_| normalized(normal_vec(rng, d))).collect();
    let trend = normalized(normal_vec(rng, d));
    let mut phases = Vec::with_capacity(spec.phases);
    for phase in 0..spec.phases {
        if phase > 0 && spec.drift > 0.0 {
            for v in &mut drifting {
                let noise = normal_vec(rng, d);
                let step: Vec<f64> = trend
                    .iter()
                    .zip(&noise)
                    .map(|(t, n)| spec.drift * (t + n / (d as f64).sqrt()))
                    .collect();
                *v = normalized(v.iter().zip(&step).map(|(a, b)| a + b).collect());
            }
        }
        let w = spec.stable_weight;
        phases.push(
            stable
                .iter()
                .zip(&drifting)
                .map(|(s, v)| normalized(s.iter().zip(v).map(|(a, b)| w * a + (1.0 - w) * b).collect()))
                .collect(),
        );
    }
    phases
}

/// Cumulative softmax distributions, one row per user.
fn cumulative(spec: &SyntheticDriftSpec, users: &[Vec<f64>], items: &[Vec<f64>]) -> Vec<Vec<f64>> {
    users
        .iter()
        .map(|z| {
            let logits: Vec<f64> = items
                .iter()
                .map(|v| spec.strength * z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = logits
                .iter()
                .map(|l| {
                    acc += (l - max).exp();
                    acc
                })
                .collect();
            cdf.iter_mut().for_each(|c| *c /= acc);
            cdf
        })
        .collect()
}

fn draw_item<R: Rng + ?Sized>(cdf: &[f64], consumed: &[bool], rng: &mut R) -> Option<usize> {
    let pick = |r: f64| cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
    for _ in 0..64 {
        let i = pick(rng.random::<f64>());
        if !consumed[i] {
            return Some(i);
        }
    }
    // renormalize over what is left
    let mass = |i: usize| cdf[i] - if i == 0 { 0.0 } else { cdf[i - 1] };
    let left: f64 = (0..cdf.len()).filter(|&i| !consumed[i]).map(mass).sum();
    if left <= 0.0 {
        return (0..cdf.len()).find(|&i| !consumed[i]);
    }
    let mut r = rng.random::<f64>() * left;
    let mut last = None;
    for i in (0..cdf.len()).filter(|&i| !consumed[i]) {
        last = Some(i);
        r -= mass(i);
        if r < 0.0 {
            return Some(i);
        }
    }
    last
}

/// Draws the warm-up window and every period. Deterministic per seed.
pub fn generate_synthetic(spec: &SyntheticDriftSpec) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let items: Vec<Vec<f64>> = (0..spec.item_count).map(|_| normal_vec(&mut rng, spec.dim)).collect();
    let latents = user_latents(spec, &mut rng);
    let mut consumed = vec![vec![false; spec.item_count]; spec.user_count];
    let mut exhausted = vec![false; spec.user_count];
    let mut out = Vec::with_capacity(spec.interactions_per_period * (spec.periods + 1));
    let mut cached: Option<(usize, Vec<Vec<f64>>)> = None;
    for window in 0..=spec.periods {
        let phase = spec.phase_of(window);
        if cached.as_ref().map(|c| c.0) != Some(phase) {
            cached = Some((phase, cumulative(spec, &latents[phase], &items)));
        }
        let cdfs = &cached.as_ref().expect("filled above").1;
        let start = window as i64 * WINDOW_LENGTH;
        let mut drawn = 0;
        while drawn < spec.interactions_per_period {
            if exhausted.iter().all(|&e| e) {
                break;
            }
            let u = rng.random_range(0..spec.user_count);
            match draw_item(&cdfs[u], &consumed[u], &mut rng) {
                Some(i) => {
                    consumed[u][i] = true;
                    out.push(InteractionRecord {
                        user_id: format!("u{u}"),
                        item_id: format!("i{i}"),
                        timestamp: start + drawn as i64,
                    });
                    drawn += 1;
                }
                None => exhausted[u] = true,
            }
        }
    }
    out
}

pub fn write_synthetic(spec: &SyntheticDriftSpec, path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>, DataError> {
    let records = generate_synthetic(spec);
    write_interactions(path, &records)?;
    Ok(records)
}

//! Shared fixtures for the benchmarks.

use dil_core::experiment::{generate_synthetic, SyntheticDriftSpec};
use dil_core::graph::{build_graph, BipartiteGraph, InteractionLog};

/// Graph of the first two windows of a synthetic stream.
pub fn synthetic_graph(users: usize, items: usize, per_window: usize) -> BipartiteGraph {
    let spec = SyntheticDriftSpec {
        user_count: users,
        item_count: items,
        interactions_per_period: per_window,
        periods: 1,
        phases: 2,
        ..SyntheticDriftSpec::default()
    };
    let log = InteractionLog::from_records(generate_synthetic(&spec)).expect("synthetic data is valid");
    build_graph(log.records(), log.user_count(), log.item_count())
}

//! Interaction ingestion and per-period graph construction.

mod activity;
mod bipartite;
mod kcore;
mod log;
mod sampling;
mod split;

pub use activity::{classify_nodes, Activity, NodeActivity};
pub use bipartite::{build_graph, BipartiteGraph};
pub use kcore::k_core_filter;
pub use log::{load_interactions, parse_interactions, write_interactions, Interaction, InteractionLog, InteractionRecord};
pub use sampling::{TrainingQuad, TrainingSet};
pub use split::{split_by_time, PeriodSplit};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read interactions: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("interaction file contains no records")]
    Empty,
    #[error("{k}-core filtering removed every interaction; try a smaller k")]
    EmptyAfterFilter { k: usize },
    #[error("period {index} contains no interactions")]
    EmptyPeriod { index: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("user {user} has interacted with every item; no negative available")]
    NoNegative { user: usize },
    #[error("user {user} has no interactions in the training window")]
    NoPositive { user: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

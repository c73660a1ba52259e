use std::sync::Arc;

use super::Interaction;
use crate::tensor::SparseMatrix;

/// User–item graph over a stacked node space: users `0..user_count`, then
/// items `user_count..user_count + item_count`.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    pub user_count: usize,
    pub item_count: usize,
    /// Symmetric adjacency with weight `1 / sqrt(deg(u) · deg(i))`.
    pub adjacency: Arc<SparseMatrix>,
    pub degrees: Vec<usize>,
}

impl BipartiteGraph {
    pub fn node_count(&self) -> usize {
        self.user_count + self.item_count
    }

    pub fn user_node(&self, user: usize) -> usize {
        user
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.user_count + item
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }
}

/// Builds the normalized graph of `records` over a fixed node universe.
/// Repeated `(user, item)` pairs collapse to one edge; nodes without
/// edges keep their index with degree zero.
pub fn build_graph(records: &[Interaction], user_count: usize, item_count: usize) -> BipartiteGraph {
    let mut edges: Vec<(usize, usize)> = records.iter().map(|r| (r.user, r.item)).collect();
    edges.sort_unstable();
    edges.dedup();
    assert!(
        edges.iter().all(|&(u, i)| u < user_count && i < item_count),
        "interaction outside the node universe"
    );
    let n = user_count + item_count;
    let mut degrees = vec![0usize; n];
    for &(u, i) in &edges {
        degrees[u] += 1;
        degrees[user_count + i] += 1;
    }
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for &(u, i) in &edges {
        let inode = user_count + i;
        let w = 1.0 / ((degrees[u] * degrees[inode]) as f64).sqrt();
        triplets.push((u, inode, w));
        triplets.push((inode, u, w));
    }
    let adjacency = SparseMatrix::from_triplets(n, n, &triplets).expect("indices validated above");
    BipartiteGraph {
        user_count,
        item_count,
        adjacency: Arc::new(adjacency),
        degrees,
    }
}

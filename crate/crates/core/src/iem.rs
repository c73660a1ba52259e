//! Historical-information extraction from a frozen previous model.
//!
//! Each node's historical embedding is an aggregate over the previous
//! model's layer outputs `e^0..e^L`, filtered by a learnable per-node
//! extractor embedding:
//!
//! * gated: `α^ℓ = σ(e_extract ⊙ e^ℓ + pos^ℓ)`, term `α^ℓ ⊙ e^ℓ`
//! * linear: term `W^ℓ (e_extract ⊙ e^ℓ)`
//!
//! Snapshot arrays enter the tape as constants, so no gradient reaches them.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Frozen layer-wise and final node representations of a trained model.
///
/// Rows cover the full node universe; rows of nodes the model had not seen
/// are zero.
#[derive(Debug)]
pub struct ModelSnapshot {
    /// Period that produced the snapshot; `None` for the warm-up model.
    pub period: Option<usize>,
    pub user_count: usize,
    pub item_count: usize,
    /// Users and items known to the producing model.
    pub known_users: usize,
    pub known_items: usize,
    layers: Vec<Tensor>,
    final_rep: Tensor,
    layer_reads: AtomicUsize,
}

impl Clone for ModelSnapshot {
    fn clone(&self) -> Self {
        Self {
            period: self.period,
            user_count: self.user_count,
            item_count: self.item_count,
            known_users: self.known_users,
            known_items: self.known_items,
            layers: self.layers.clone(),
            final_rep: self.final_rep.clone(),
            layer_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for ModelSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.period == other.period
            && self.user_count == other.user_count
            && self.item_count == other.item_count
            && self.known_users == other.known_users
            && self.known_items == other.known_items
            && self.layers == other.layers
            && self.final_rep == other.final_rep
    }
}

impl ModelSnapshot {
    /// Builds a snapshot, zeroing rows of nodes beyond the known prefix.
    pub fn new(
        period: Option<usize>,
        (user_count, item_count): (usize, usize),
        (known_users, known_items): (usize, usize),
        mut layers: Vec<Tensor>,
        mut final_rep: Tensor,
    ) -> Result<Self> {
        let rows = user_count + item_count;
        for t in layers.iter_mut().chain(std::iter::once(&mut final_rep)) {
            if t.rows() != rows || t.shape().len() != 2 {
                return Err(TensorError::ShapeMismatch {
                    op: "snapshot",
                    left: vec![rows],
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(TensorError::InvalidArgument("snapshot contains non-finite values".into()));
            }
            for r in (known_users..user_count).chain(user_count + known_items..rows) {
                t.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(Self {
            period,
            user_count,
            item_count,
            known_users,
            known_items,
            layers,
            final_rep,
            layer_reads: AtomicUsize::new(0),
        })
    }

    /// Layer outputs `e^0..e^L`.
    pub fn layers(&self) -> &[Tensor] {
        self.layer_reads.fetch_add(1, Ordering::Relaxed);
        &self.layers
    }

    pub fn final_rep(&self) -> &Tensor {
        &self.final_rep
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.final_rep.cols()
    }

    /// How often the layer outputs were read.
    pub fn layer_reads(&self) -> usize {
        self.layer_reads.load(Ordering::Relaxed)
    }

    pub fn node_count(&self) -> usize {
        self.user_count + self.item_count
    }

    /// Whether the producing model knew the node at stacked index `node`.
    pub fn knows(&self, node: usize) -> bool {
        if node < self.user_count {
            node < self.known_users
        } else {
            node - self.user_count < self.known_items
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// Sigmoid gates with a per-layer positional vector.
    Gated,
    /// One learnable `d × d` matrix per layer.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Mean,
    /// Concatenation followed by a learnable projection back to `d`.
    Concat,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
            Self::Concat => "concat",
        })
    }
}

/// Learnable extractor state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub design: Design,
    pub aggregation: Aggregation,
    /// One row per node.
    pub extract: Tensor,
    /// `pos^0..pos^L`, shared by all nodes (gated design).
    pub pos: Vec<Tensor>,
    /// `W^0..W^L` (linear design).
    pub weights: Vec<Tensor>,
    /// `(L+1)d × d` projection for concatenation.
    pub projection: Option<Tensor>,
}

pub const EXTRACT_INIT_BOUND: f64 = 0.05;

impl ExtractorParams {
    pub fn init<R: Rng + ?Sized>(
        design: Design,
        aggregation: Aggregation,
        nodes: usize,
        layers: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let extract = Tensor::uniform(nodes, dim, EXTRACT_INIT_BOUND, rng);
        let (pos, weights) = match design {
            Design::Gated => ((0..=layers).map(|_| Tensor::zeros(&[dim])).collect(), Vec::new()),
            Design::Linear => (
                Vec::new(),
                (0..=layers)
                    .map(|_| {
                        let mut w = Tensor::uniform(dim, dim, 0.01, rng);
                        for k in 0..dim {
                            w.values_mut()[k * dim + k] += 1.0;
                        }
                        w
                    })
                    .collect(),
            ),
        };
        let projection = (aggregation == Aggregation::Concat).then(|| {
            // block of identities / (L+1): starts as mean pooling
            let mut p = Tensor::zeros(&[(layers + 1) * dim, dim]);
            for l in 0..=layers {
                for k in 0..dim {
                    p.values_mut()[(l * dim + k) * dim + k] = 1.0 / (layers + 1) as f64;
                }
            }
            p
        });
        Self {
            design,
            aggregation,
            extract,
            pos,
            weights,
            projection,
        }
    }

    pub fn layer_count(&self) -> usize {
        match self.design {
            Design::Gated => self.pos.len(),
            Design::Linear => self.weights.len(),
        }
    }

    /// Dense (non-table) parameters as `(name, tensor)`.
    pub fn named_dense(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.extend(self.pos.iter().enumerate().map(|(l, t)| (format!("iem.pos.{l}"), t)));
        out.extend(self.weights.iter().enumerate().map(|(l, t)| (format!("iem.w.{l}"), t)));
        if let Some(p) = &self.projection {
            out.push(("iem.projection".into(), p));
        }
        out
    }

    /// `iem.extract` followed by the dense parameters.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("iem.extract".to_string(), &self.extract)];
        out.extend(self.named_dense());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![("iem.extract".into(), &mut self.extract)];
        out.extend(self.pos.iter_mut().enumerate().map(|(l, t)| (format!("iem.pos.{l}"), t)));
        out.extend(self.weights.iter_mut().enumerate().map(|(l, t)| (format!("iem.w.{l}"), t)));
        if let Some(p) = &mut self.projection {
            out.push(("iem.projection".into(), p));
        }
        out
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ExtractorVars {
        ExtractorVars {
            extract: tape.leaf(self.extract.clone(), trainable),
            pos: self.pos.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            weights: self.weights.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            projection: self.projection.as_ref().map(|t| tape.leaf(t.clone(), trainable)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractorVars {
    pub extract: Var,
    pub pos: Vec<Var>,
    pub weights: Vec<Var>,
    pub projection: Option<Var>,
}

impl ExtractorVars {
    /// Dense variables in the order of [`ExtractorParams::named_dense`].
    pub fn dense(&self) -> Vec<Var> {
        let mut out = self.pos.clone();
        out.extend(&self.weights);
        out.extend(self.projection);
        out
    }

    /// Variables in the order of [`ExtractorParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.extract];
        out.extend(self.dense());
        out
    }
}

fn aggregate(tape: &mut Tape, terms: Vec<Var>, aggregation: Aggregation, projection: Option<Var>) -> Result<Var> {
    match aggregation {
        Aggregation::Sum | Aggregation::Mean => {
            let count = terms.len();
            let mut iter = terms.into_iter();
            let mut acc = iter
                .next()
                .ok_or_else(|| TensorError::InvalidArgument("no layers to aggregate".into()))?;
            for t in iter {
                acc = tape.add(acc, t)?;
            }
            if aggregation == Aggregation::Mean {
                acc = tape.scale(acc, 1.0 / count as f64)?;
            }
            Ok(acc)
        }
        Aggregation::Concat => {
            let p = projection
                .ok_or_else(|| TensorError::InvalidArgument("concat aggregation needs a projection".into()))?;
            let cat = tape.concat_cols(&terms)?;
            tape.matmul(cat, p)
        }
    }
}

/// Historical embeddings for every row of `layers` (constants on the tape).
pub fn extract_table(
    tape: &mut Tape,
    layers: &[Var],
    vars: &ExtractorVars,
    design: Design,
    aggregation: Aggregation,
) -> Result<Var> {
    let rows = tape.value(vars.extract).rows();
    let mut terms = Vec::with_capacity(layers.len());
    for (l, &layer) in layers.iter().enumerate() {
        let gated_input = tape.mul(vars.extract, layer)?;
        let term = match design {
            Design::Gated => {
                let pos = vars
                    .pos
                    .get(l)
                    .ok_or_else(|| TensorError::InvalidArgument(format!("missing positional vector {l}")))?;
                let pos = tape.repeat_rows(*pos, rows)?;
                let logits = tape.add(gated_input, pos)?;
                let alpha = tape.sigmoid(logits)?;
                tape.mul(alpha, layer)?
            }
            Design::Linear => {
                let w = vars
                    .weights
                    .get(l)
                    .ok_or_else(|| TensorError::InvalidArgument(format!("missing layer matrix {l}")))?;
                let wt = tape.transpose(*w)?;
                tape.matmul(gated_input, wt)?
            }
        };
        terms.push(term);
    }
    aggregate(tape, terms, aggregation, vars.projection)
}

/// `σ(e_extract ⊙ e^ℓ + pos^ℓ)` for a single node.
pub fn layer_weight_design1(extract: &[f64], layer: &[f64], pos: &[f64]) -> Vec<f64> {
    extract
        .iter()
        .zip(layer)
        .zip(pos)
        .map(|((x, e), p)| crate::tensor::sigmoid(x * e + p))
        .collect()
}

fn node_layers(snapshot: &ModelSnapshot, node: usize) -> Result<Vec<&[f64]>> {
    if node >= snapshot.node_count() || !snapshot.knows(node) {
        return Err(TensorError::InvalidArgument(format!(
            "node {node} is not covered by the snapshot; initialize it as a new node"
        )));
    }
    Ok(snapshot.layers().iter().map(|t| t.row(node)).collect())
}

fn aggregate_rows(terms: Vec<Vec<f64>>, params: &ExtractorParams) -> Vec<f64> {
    let d = terms[0].len();
    match params.aggregation {
        Aggregation::Sum | Aggregation::Mean => {
            let mut out = vec![0.0; d];
            for t in &terms {
                for (o, v) in out.iter_mut().zip(t) {
                    *o += v;
                }
            }
            if params.aggregation == Aggregation::Mean {
                out.iter_mut().for_each(|o| *o /= terms.len() as f64);
            }
            out
        }
        Aggregation::Concat => {
            let cat: Vec<f64> = terms.concat();
            let p = params.projection.as_ref().expect("concat has a projection");
            crate::tensor::dense_matmul(&cat, p.values(), 1, cat.len(), d)
        }
    }
}

/// Gated extraction for one node, without recording gradients.
pub fn extract_design1(snapshot: &ModelSnapshot, params: &ExtractorParams, node: usize) -> Result<Vec<f64>> {
    let layers = node_layers(snapshot, node)?;
    let x = params.extract.row(node);
    let terms = layers
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let alpha = layer_weight_design1(x, e, params.pos[l].values());
            alpha.iter().zip(e.iter()).map(|(a, v)| a * v).collect()
        })
        .collect();
    Ok(aggregate_rows(terms, params))
}

/// Linear extraction for one node, without recording gradients.
pub fn extract_design2(snapshot: &ModelSnapshot, params: &ExtractorParams, node: usize) -> Result<Vec<f64>> {
    let layers = node_layers(snapshot, node)?;
    let x = params.extract.row(node);
    let terms = layers
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let w = &params.weights[l];
            let d = w.rows();
            let input: Vec<f64> = x.iter().zip(e.iter()).map(|(a, b)| a * b).collect();
            (0..d)
                .map(|r| w.row(r).iter().zip(&input).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(aggregate_rows(terms, params))
}

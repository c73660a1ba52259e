//! LightGCN and NGCF propagation over a [`BipartiteGraph`].
//!
//! Both models map initial node features `h0` (one row per node) to a stack
//! of layer representations `h0..hL`; the final representation is their
//! elementwise mean. Weight matrices act on row vectors (`h · W`).

use rand::Rng;

use crate::graph::BipartiteGraph;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LightGcn,
    Ngcf,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lightgcn" => Ok(Self::LightGcn),
            "ngcf" => Ok(Self::Ngcf),
            other => Err(format!("unknown model `{other}` (expected lightgcn or ngcf)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LightGcn => "lightgcn",
            Self::Ngcf => "ngcf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub dim: usize,
    pub leaky_relu_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LightGcn,
            layers: 2,
            dim: 32,
            leaky_relu_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.layers < 1 {
            return Err("layers must be at least 1".into());
        }
        if self.dim < 1 {
            return Err("dim must be at least 1".into());
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return Err("leaky_relu_slope must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// Per-layer NGCF transforms for layers `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct NgcfWeights {
    pub w1: Vec<Tensor>,
    pub w2: Vec<Tensor>,
    pub b1: Vec<Tensor>,
    pub b2: Vec<Tensor>,
}

impl NgcfWeights {
    /// Uniform fan-based initialization; biases start at zero.
    pub fn init<R: Rng + ?Sized>(layers: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (2.0 * dim as f64)).sqrt();
        Self {
            w1: (0..layers).map(|_| Tensor::uniform(dim, dim, bound, rng)).collect(),
            w2: (0..layers).map(|_| Tensor::uniform(dim, dim, bound, rng)).collect(),
            b1: (0..layers).map(|_| Tensor::zeros(&[dim])).collect(),
            b2: (0..layers).map(|_| Tensor::zeros(&[dim])).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.w1.len()
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for l in 0..self.layers() {
            out.push((format!("ngcf.w1.{l}"), &self.w1[l]));
            out.push((format!("ngcf.w2.{l}"), &self.w2[l]));
            out.push((format!("ngcf.b1.{l}"), &self.b1[l]));
            out.push((format!("ngcf.b2.{l}"), &self.b2[l]));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (l, (((w1, w2), b1), b2)) in self
            .w1
            .iter_mut()
            .zip(self.w2.iter_mut())
            .zip(self.b1.iter_mut())
            .zip(self.b2.iter_mut())
            .enumerate()
        {
            out.push((format!("ngcf.w1.{l}"), w1));
            out.push((format!("ngcf.w2.{l}"), w2));
            out.push((format!("ngcf.b1.{l}"), b1));
            out.push((format!("ngcf.b2.{l}"), b2));
        }
        out
    }

    /// Records the weights on `tape`, in the order of [`NgcfWeights::named`].
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> NgcfVars {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        NgcfVars {
            w1: self.w1.iter().map(&mut leaf).collect(),
            w2: self.w2.iter().map(&mut leaf).collect(),
            b1: self.b1.iter().map(&mut leaf).collect(),
            b2: self.b2.iter().map(&mut leaf).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NgcfVars {
    pub w1: Vec<Var>,
    pub w2: Vec<Var>,
    pub b1: Vec<Var>,
    pub b2: Vec<Var>,
}

impl NgcfVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in 0..self.w1.len() {
            out.extend([self.w1[l], self.w2[l], self.b1[l], self.b2[l]]);
        }
        out
    }
}

/// Layer representations `h0..hL` and their mean.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub layers: Vec<Var>,
    pub final_rep: Var,
}

/// Runs `config.layers` propagation steps from `h0`.
pub fn propagate(
    tape: &mut Tape,
    config: &ModelConfig,
    graph: &BipartiteGraph,
    h0: Var,
    ngcf: Option<&NgcfVars>,
) -> Result<LayerStack> {
    let shape = tape.value(h0).shape().to_vec();
    if shape.len() != 2 || shape[0] != graph.node_count() || shape[1] != config.dim {
        return Err(TensorError::ShapeMismatch {
            op: "propagate",
            left: vec![graph.node_count(), config.dim],
            right: shape,
        });
    }
    let n = graph.node_count();
    let mut layers = vec![h0];
    for l in 0..config.layers {
        let prev = *layers.last().expect("h0 present");
        let agg = tape.spmm(&graph.adjacency, prev)?;
        let next = match config.kind {
            ModelKind::LightGcn => agg,
            ModelKind::Ngcf => {
                let w = ngcf.ok_or_else(|| TensorError::InvalidArgument("NGCF propagation needs weights".into()))?;
                if w.w1.len() != config.layers {
                    return Err(TensorError::InvalidArgument(format!(
                        "NGCF weights cover {} layers, config has {}",
                        w.w1.len(),
                        config.layers
                    )));
                }
                // (h + Σ w h_i) W1 + b1
                let self_and_nb = tape.add(prev, agg)?;
                let lin = tape.matmul(self_and_nb, w.w1[l])?;
                let b1 = tape.repeat_rows(w.b1[l], n)?;
                let lin = tape.add(lin, b1)?;
                // (Σ w h_i ⊙ h) W2 + b2
                let inter = tape.mul(agg, prev)?;
                let inter = tape.matmul(inter, w.w2[l])?;
                let b2 = tape.repeat_rows(w.b2[l], n)?;
                let inter = tape.add(inter, b2)?;
                let pre = tape.add(lin, inter)?;
                tape.leaky_relu(pre, config.leaky_relu_slope)?
            }
        };
        layers.push(next);
    }
    let final_rep = final_representation(tape, &layers)?;
    Ok(LayerStack { layers, final_rep })
}

/// Elementwise mean of all layers.
pub fn final_representation(tape: &mut Tape, layers: &[Var]) -> Result<Var> {
    let (first, rest) = layers
        .split_first()
        .ok_or_else(|| TensorError::InvalidArgument("empty layer stack".into()))?;
    let mut acc = *first;
    for &l in rest {
        acc = tape.add(acc, l)?;
    }
    tape.scale(acc, 1.0 / layers.len() as f64)
}

/// Forward pass without gradients; returns the layer tensors and the final
/// representation.
pub fn infer(
    config: &ModelConfig,
    graph: &BipartiteGraph,
    h0: &Tensor,
    ngcf: Option<&NgcfWeights>,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut tape = Tape::new();
    let h = tape.constant(h0.clone());
    let vars = ngcf.map(|w| w.record(&mut tape, false));
    let stack = propagate(&mut tape, config, graph, h, vars.as_ref())?;
    let layers = stack.layers.iter().map(|&v| tape.value(v).clone()).collect();
    let final_rep = tape.value(stack.final_rep).clone();
    Ok((layers, final_rep))
}

/// Predicted preference: dot product of final representations.
pub fn score(user: &[f64], item: &[f64]) -> f64 {
    user.iter().zip(item).map(|(a, b)| a * b).sum()
}

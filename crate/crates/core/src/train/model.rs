use rand::Rng;

use crate::graph::BipartiteGraph;
use crate::iem::{extract_table, Aggregation, Design, ExtractorParams, ExtractorVars, ModelSnapshot};
use crate::models::{infer, propagate, LayerStack, ModelConfig, ModelKind, NgcfVars, NgcfWeights};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Bound of the uniform initialization of embedding rows.
pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

/// Every learnable array of a recommender. Under DIL `embeddings` holds
/// `e_new` and `extractor` is present; base models use `embeddings` as `h0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embeddings: Tensor,
    pub ngcf: Option<NgcfWeights>,
    pub extractor: Option<ExtractorParams>,
}

/// Tape handles of a recorded [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embeddings: Var,
    pub ngcf: Option<NgcfVars>,
    pub extractor: Option<ExtractorVars>,
}

impl ModelVars {
    /// Dense (non-table) weights.
    pub fn dense(&self) -> Vec<Var> {
        let mut out = self.ngcf.as_ref().map(NgcfVars::all).unwrap_or_default();
        if let Some(x) = &self.extractor {
            out.extend(x.dense());
        }
        out
    }

    /// Variables in the order of [`Model::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embeddings];
        if let Some(w) = &self.ngcf {
            out.extend(w.all());
        }
        if let Some(x) = &self.extractor {
            out.extend(x.all());
        }
        out
    }
}

/// Output of a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub vars: ModelVars,
    pub e_hist: Option<Var>,
    /// Snapshot layer constants read by the extractor.
    pub snapshot_layers: Vec<Var>,
    pub stack: LayerStack,
}

impl Model {
    /// Fresh base model over `nodes` nodes.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, nodes: usize, rng: &mut R) -> Self {
        let embeddings = Tensor::uniform(nodes, config.dim, EMBEDDING_INIT_BOUND, rng);
        let ngcf = (config.kind == ModelKind::Ngcf).then(|| NgcfWeights::init(config.layers, config.dim, rng));
        Self {
            config,
            embeddings,
            ngcf,
            extractor: None,
        }
    }

    pub fn with_extractor<R: Rng + ?Sized>(mut self, design: Design, aggregation: Aggregation, rng: &mut R) -> Self {
        self.extractor = Some(ExtractorParams::init(
            design,
            aggregation,
            self.node_count(),
            self.config.layers,
            self.config.dim,
            rng,
        ));
        self
    }

    pub fn node_count(&self) -> usize {
        self.embeddings.rows()
    }

    /// Named arrays in a stable order, as stored in checkpoints.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embeddings".into(), &self.embeddings)];
        if let Some(w) = &self.ngcf {
            out.extend(w.named());
        }
        if let Some(x) = &self.extractor {
            out.extend(x.named());
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![("embeddings".into(), &mut self.embeddings)];
        if let Some(w) = &mut self.ngcf {
            out.extend(w.named_mut());
        }
        if let Some(x) = &mut self.extractor {
            out.extend(x.named_mut());
        }
        out
    }

    pub fn round_to_f32(&mut self) {
        for (_, t) in self.named_mut() {
            t.round_to_f32();
        }
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            embeddings: tape.leaf(self.embeddings.clone(), trainable),
            ngcf: self.ngcf.as_ref().map(|w| w.record(tape, trainable)),
            extractor: self.extractor.as_ref().map(|x| x.record(tape, trainable)),
        }
    }

    /// Records `h0` and propagation. A model with an extractor requires the
    /// previous snapshot, whose layers enter as constants.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &BipartiteGraph,
        snapshot: Option<&ModelSnapshot>,
        trainable: bool,
    ) -> Result<Forward> {
        let vars = self.record(tape, trainable);
        let mut h0 = vars.embeddings;
        let mut e_hist = None;
        let mut snapshot_layers = Vec::new();
        if let (Some(params), Some(xv)) = (&self.extractor, &vars.extractor) {
            let snapshot = snapshot
                .ok_or_else(|| TensorError::InvalidArgument("extractor needs the previous snapshot".into()))?;
            if snapshot.layer_count() != self.config.layers + 1 {
                return Err(TensorError::InvalidArgument(format!(
                    "snapshot has {} layer outputs, model expects {}",
                    snapshot.layer_count(),
                    self.config.layers + 1
                )));
            }
            if snapshot.node_count() != self.node_count() {
                return Err(TensorError::ShapeMismatch {
                    op: "snapshot",
                    left: vec![self.node_count()],
                    right: vec![snapshot.node_count()],
                });
            }
            let layers: Vec<Var> = snapshot.layers().iter().map(|t| tape.constant(t.clone())).collect();
            let hist = extract_table(tape, &layers, xv, params.design, params.aggregation)?;
            h0 = crate::disentangle::fuse_initial(tape, hist, vars.embeddings)?;
            e_hist = Some(hist);
            snapshot_layers = layers;
        }
        let stack = propagate(tape, &self.config, graph, h0, vars.ngcf.as_ref())?;
        Ok(Forward {
            vars,
            e_hist,
            snapshot_layers,
            stack,
        })
    }

    /// Initial node features without gradients.
    pub fn initial_features(&self, snapshot: Option<&ModelSnapshot>) -> Result<Tensor> {
        let Some(params) = &self.extractor else {
            return Ok(self.embeddings.clone());
        };
        let snapshot =
            snapshot.ok_or_else(|| TensorError::InvalidArgument("extractor needs the previous snapshot".into()))?;
        let mut tape = Tape::new();
        let layers: Vec<Var> = snapshot.layers().iter().map(|t| tape.constant(t.clone())).collect();
        let xv = params.record(&mut tape, false);
        let hist = extract_table(&mut tape, &layers, &xv, params.design, params.aggregation)?;
        let emb = tape.constant(self.embeddings.clone());
        let h0 = tape.add(hist, emb)?;
        Ok(tape.value(h0).clone())
    }

    /// Layer outputs and final representations over `graph`.
    pub fn infer(&self, graph: &BipartiteGraph, snapshot: Option<&ModelSnapshot>) -> Result<(Vec<Tensor>, Tensor)> {
        let h0 = self.initial_features(snapshot)?;
        infer(&self.config, graph, &h0, self.ngcf.as_ref())
    }
}

/// Final representations split into user and item tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Finals {
    pub users: Tensor,
    pub items: Tensor,
}

impl Finals {
    pub fn split(final_rep: &Tensor, user_count: usize) -> Self {
        let d = final_rep.cols();
        let (u, i) = final_rep.values().split_at(user_count * d);
        Finals {
            users: Tensor::matrix(user_count, d, u.to_vec()).expect("row split"),
            items: Tensor::matrix(final_rep.rows() - user_count, d, i.to_vec()).expect("row split"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Interaction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph() -> BipartiteGraph {
        let recs: Vec<Interaction> = [(0, 0), (0, 1), (1, 1), (2, 2)]
            .iter()
            .map(|&(user, item)| Interaction { user, item, timestamp: 0 })
            .collect();
        build_graph(&recs, 3, 3)
    }

    #[test]
    fn names_and_vars_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let config = ModelConfig {
            kind: ModelKind::Ngcf,
            layers: 2,
            dim: 4,
            ..ModelConfig::default()
        };
        let mut model = Model::init(config, 6, &mut rng).with_extractor(Design::Linear, Aggregation::Mean, &mut rng);
        let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = model.named_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        let mut tape = Tape::new();
        let vars = model.record(&mut tape, true);
        let ordered = vars.ordered();
        assert_eq!(ordered.len(), names.len());
        for ((_, t), v) in model.named().into_iter().zip(ordered) {
            assert_eq!(tape.value(v), t);
        }
    }

    #[test]
    fn forward_matches_inference() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let g = graph();
        let config = ModelConfig {
            layers: 2,
            dim: 3,
            ..ModelConfig::default()
        };
        let base = Model::init(config.clone(), 6, &mut rng);
        let (layers, final_rep) = base.infer(&g, None).unwrap();
        let snap = ModelSnapshot::new(Some(0), (3, 3), (3, 3), layers, final_rep).unwrap();
        let dil = Model::init(config, 6, &mut rng).with_extractor(Design::Gated, Aggregation::Mean, &mut rng);
        let mut tape = Tape::new();
        let fwd = dil.forward(&mut tape, &g, Some(&snap), true).unwrap();
        let (_, expected) = dil.infer(&g, Some(&snap)).unwrap();
        assert_eq!(tape.value(fwd.stack.final_rep), &expected);
        assert!(fwd.e_hist.is_some());
        assert!(dil.forward(&mut Tape::new(), &g, None, true).is_err());
    }

    #[test]
    fn finals_split_rows() {
        let t = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let f = Finals::split(&t, 1);
        assert_eq!(f.users.values(), &[1.0]);
        assert_eq!(f.items.values(), &[2.0, 3.0]);
    }
}

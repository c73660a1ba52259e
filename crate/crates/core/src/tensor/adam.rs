use std::collections::BTreeMap;

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

/// Adam with bias correction. State is keyed by parameter name so that
/// parameter sets may be assembled in any order.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    config: AdamConfig,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.states.get(name)
    }

    /// Updates `param` in place from `grad`.
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &[f64], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grad.len() != param.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: param.shape().to_vec(),
                right: vec![grad.len()],
            });
        }
        if let Some(index) = grad.iter().position(|g| g.is_nan()) {
            return Err(TensorError::NanGradient {
                param: name.to_string(),
                index,
            });
        }
        let cfg = self.config;
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(grad.len()));
        if state.first_moment.len() != grad.len() {
            // The parameter grew (new nodes appeared); new rows start from zero moments.
            state.first_moment.resize(grad.len(), 0.0);
            state.second_moment.resize(grad.len(), 0.0);
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, &g), m), v) in param
            .values_mut()
            .iter_mut()
            .zip(grad)
            .zip(state.first_moment.iter_mut())
            .zip(state.second_moment.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

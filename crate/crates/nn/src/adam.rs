use crate::error::{NnError, Result};
use crate::graph::{ComputeGraph, Gradients};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-11,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates, one entry per parameter tensor in graph order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One Adam update of a single tensor at (already incremented) step `step`.
///
/// Weight decay is decoupled: `param -= lr·wd·param` after the moment step.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for k in 0..param.len() {
        let g = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        param[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        param[k] -= cfg.lr * cfg.weight_decay * param[k];
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    /// Applies one update to every parameter of `graph`.
    ///
    /// Frozen graphs are left untouched. Non-finite gradients abort before
    /// any parameter changes.
    pub fn step(&mut self, graph: &mut ComputeGraph, grads: &Gradients) -> Result<()> {
        if graph.is_frozen() {
            return Ok(());
        }
        let shapes_match = grads.params.len() == graph.params().len()
            && grads
                .params
                .iter()
                .zip(graph.params())
                .all(|(g, p)| g.len() == p.len() && g.iter().zip(p).all(|(a, b)| a.len() == b.value.len()));
        if !shapes_match {
            return Err(NnError::State("gradients do not match graph parameters".into()));
        }
        for (node, gs) in grads.params.iter().enumerate() {
            for (k, g) in gs.iter().enumerate() {
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(NnError::Numeric(format!(
                        "non-finite gradient {} at node {} ({}), tensor {k}, index {bad}",
                        g[bad],
                        node,
                        graph.topology().nodes[node].name
                    )));
                }
            }
        }
        if self.state.m.is_empty() {
            for p in graph.params().iter().flatten() {
                self.state.m.push(vec![0.0; p.value.len()]);
                self.state.v.push(vec![0.0; p.value.len()]);
            }
        }
        self.state.step += 1;
        let step = self.state.step;
        let mut slot = 0;
        for (node, gs) in graph.params_mut().iter_mut().zip(&grads.params) {
            for (p, g) in node.iter_mut().zip(gs) {
                adam_update(
                    &mut p.value,
                    g,
                    &mut self.state.m[slot],
                    &mut self.state.v[slot],
                    step,
                    &self.config,
                );
                slot += 1;
            }
        }
        Ok(())
    }
}

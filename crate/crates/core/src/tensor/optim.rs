use super::{ParamStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam { lr: f32 },
    /// Plain SGD when `momentum` is zero.
    Sgd { lr: f32, momentum: f32 },
}

impl OptimizerKind {
    pub fn learning_rate(&self) -> f32 {
        match *self {
            OptimizerKind::Adam { lr } | OptimizerKind::Sgd { lr, .. } => lr,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter accumulators. Adam uses both `first` and `second`; SGD uses
/// `first` as its velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            state: OptimizerState {
                step: 0,
                first: zeros(),
                second,
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies one update from the gradients stored in `params`.
    ///
    /// Fails without touching anything if a gradient is non-finite or the
    /// store no longer matches the accumulators.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), TensorError> {
        if params.len() != self.state.first.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.first.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.state.first) {
            if p.value.shape() != m.shape() {
                return Err(TensorError::Shape {
                    op: "optimizer_step",
                    expected: format!("{} {:?}", p.name, m.shape()),
                    actual: format!("{:?}", p.value.shape()),
                });
            }
            if !p.grad.all_finite() {
                return Err(TensorError::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        match self.kind {
            OptimizerKind::Adam { lr } => {
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                let step_size = lr as f64 / bc1;
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(&mut self.state.first)
                    .zip(&mut self.state.second)
                {
                    let (m, v) = (m.data_mut(), v.data_mut());
                    let g = p.grad.data();
                    let w = p.value.data_mut();
                    for j in 0..w.len() {
                        let gj = g[j] as f64;
                        let mj = ADAM_BETA1 * m[j] as f64 + (1.0 - ADAM_BETA1) * gj;
                        let vj = ADAM_BETA2 * v[j] as f64 + (1.0 - ADAM_BETA2) * gj * gj;
                        m[j] = mj as f32;
                        v[j] = vj as f32;
                        let denom = (vj / bc2).sqrt() + ADAM_EPS;
                        w[j] = (w[j] as f64 - step_size * mj / denom) as f32;
                    }
                }
            }
            OptimizerKind::Sgd { lr, momentum } => {
                for (p, vel) in params.iter_mut().zip(&mut self.state.first) {
                    let vel = vel.data_mut();
                    let g = p.grad.data();
                    let w = p.value.data_mut();
                    for j in 0..w.len() {
                        vel[j] = momentum * vel[j] + g[j];
                        w[j] -= lr * vel[j];
                    }
                }
            }
        }
        Ok(())
    }
}

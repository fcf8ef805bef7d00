//! First-order optimizers over a fixed list of tensors.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one parameter list. The list order and shapes must
/// not change between steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[&Tensor]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        let zeros = |_: ()| params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(()), zeros(())),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Optimizer {
            kind,
            lr,
            steps: 0,
            m,
            v,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Tensors whose `mask` entry is false are left untouched.
    /// Fails before modifying anything if a gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], mask: &[bool]) -> Result<()> {
        if params.len() != grads.len() || params.len() != mask.len() {
            return Err(Error::Contract(format!(
                "{} parameters, {} gradients, {} mask entries",
                params.len(),
                grads.len(),
                mask.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer_step",
                    format!("parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, g), &on) in params.iter_mut().zip(grads).zip(mask) {
                    if on {
                        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                            *x -= self.lr * d;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, ((p, g), &on)) in params.iter_mut().zip(grads).zip(mask).enumerate() {
                    if !on {
                        continue;
                    }
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for (((x, d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let mh = *mi / c1;
                        let vh = *vi / c2;
                        *x -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

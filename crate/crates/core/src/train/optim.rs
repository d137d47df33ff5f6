use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{ParamId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::InvalidSpec(format!("unknown optimizer `{other}` (sgd, adam)"))),
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Applies gradient steps to the trainable parameters of a store. Frozen
/// parameters are skipped and get no optimizer state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    state: HashMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            state: HashMap::new(),
        }
    }

    /// Number of parameters holding optimizer state.
    pub fn state_len(&self) -> usize {
        self.state.len()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        // validate everything before the first write
        for (id, g) in grads {
            let p = store.get(*id);
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "gradient {:?} for `{}` {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
        }
        let lr = self.learning_rate;
        for (id, g) in grads {
            if !store.trainable(*id) {
                continue;
            }
            let value = store.value_mut(*id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &g) in value.iter_mut().zip(g.data()) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let st = self.state.entry(*id).or_insert_with(|| Moments {
                        m: vec![0.0; g.len()],
                        v: vec![0.0; g.len()],
                        t: 0,
                    });
                    st.t += 1;
                    let c1 = 1.0 - beta1.powi(st.t);
                    let c2 = 1.0 - beta2.powi(st.t);
                    for (((p, &g), m), v) in value.iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

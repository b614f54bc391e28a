use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{OptState, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::SgdMomentum { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one update to every non-frozen parameter, then zeroes all gradients.
pub fn opt_step(store: &mut ParamStore, method: Optimizer, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    for (name, p) in store.iter_mut() {
        if p.frozen {
            continue;
        }
        let shape = p.value.shape();
        match method {
            Optimizer::SgdMomentum { momentum } => {
                let state = p.state.get_or_insert_with(|| OptState::Momentum {
                    velocity: Matrix::zeros(shape.0, shape.1),
                });
                let OptState::Momentum { velocity } = state else {
                    return Err(Error::invalid(format!("optimizer changed for `{name}`")));
                };
                for ((w, g), v) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(velocity.data_mut())
                {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let state = p.state.get_or_insert_with(|| OptState::Adam {
                    m: Matrix::zeros(shape.0, shape.1),
                    v: Matrix::zeros(shape.0, shape.1),
                    t: 0,
                });
                let OptState::Adam { m, v, t } = state else {
                    return Err(Error::invalid(format!("optimizer changed for `{name}`")));
                };
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (((w, g), mi), vi) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}` after update")));
        }
    }
    store.zero_grad();
    Ok(())
}

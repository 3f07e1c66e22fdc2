//! Adam with bias-corrected moments.

use crate::tensor::{Tensor, TensorError};

/// First/second moment estimates for one parameter list. The state is tied
/// to the order and shapes of the parameters it was built from.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh zeroed state with the standard betas (0.9, 0.999) and 1e-8.
    pub fn new(params: &[&Tensor]) -> AdamState {
        AdamState::with_hyperparams(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(params: &[&Tensor], beta1: f64, beta2: f64, epsilon: f64) -> AdamState {
        AdamState {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update, in place. `params`, `grads`, and the state must line up
/// element for element.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Invalid {
            op: "adam_step",
            msg: format!(
                "parameter/gradient/state counts differ: {} vs {} vs {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let m_correction = 1.0 - state.beta1.powi(t);
    let v_correction = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(&mut state.v)) {
        let (b1, b2) = (state.beta1, state.beta2);
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / m_correction;
            let v_hat = *vv / v_correction;
            *pv -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

//! Rectified Adam. While the variance-rectification length is at or below 4
//! the update falls back to un-adapted SGD with momentum, per the method's
//! definition.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

pub const RADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
struct MomentPair {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment accumulators for a fixed list of tensors, plus the
/// shared step count and rectification bookkeeping.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    beta1: f64,
    beta2: f64,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
    rho_inf: f64,
    slots: Vec<MomentPair>,
}

impl OptimizerState {
    pub fn new(beta1: f64, beta2: f64, shapes: &[usize]) -> Self {
        OptimizerState {
            beta1,
            beta2,
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            rho_inf: 2.0 / (1.0 - beta2) - 1.0,
            slots: shapes
                .iter()
                .map(|&n| MomentPair {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rectification length at step `t` (1-based); the adaptive branch is
    /// taken when it exceeds 4.
    pub fn rho_at(&self, beta2_pow_t: f64, t: u64) -> f64 {
        self.rho_inf - 2.0 * (t as f64) * beta2_pow_t / (1.0 - beta2_pow_t)
    }
}

/// One rectified-Adam update over `targets` with matching `grads`.
///
/// Slot order must be identical across calls; that ordering is what makes
/// full-batch training deterministic.
pub fn radam_update(
    state: &mut OptimizerState,
    lr: f64,
    targets: &mut [&mut [f64]],
    grads: &[&[f64]],
) -> Result<()> {
    if targets.len() != state.slots.len() || grads.len() != state.slots.len() {
        return Err(CoreError::Shape(alloc::format!(
            "optimizer has {} slots but got {} targets / {} grads",
            state.slots.len(),
            targets.len(),
            grads.len()
        )));
    }
    state.step += 1;
    state.beta1_pow *= state.beta1;
    state.beta2_pow *= state.beta2;
    let t = state.step;
    let bc1 = 1.0 - state.beta1_pow;
    let bc2 = 1.0 - state.beta2_pow;
    let rho = state.rho_at(state.beta2_pow, t);
    let rectified = rho > 4.0;
    let r_t = if rectified {
        let rho_inf = state.rho_inf;
        crate::math::sqrt(
            ((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho),
        )
    } else {
        0.0
    };
    for ((slot, target), grad) in state.slots.iter_mut().zip(targets.iter_mut()).zip(grads) {
        if slot.m.len() != target.len() || grad.len() != target.len() {
            return Err(CoreError::Shape(
                "optimizer slot and tensor sizes disagree".into(),
            ));
        }
        let b1 = state.beta1;
        let b2 = state.beta2;
        for i in 0..target.len() {
            let g = grad[i];
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let update = if rectified {
                let v_hat = crate::math::sqrt(slot.v[i] / bc2);
                r_t * m_hat / (v_hat + RADAM_EPS)
            } else {
                m_hat
            };
            target[i] -= lr * update;
        }
    }
    Ok(())
}

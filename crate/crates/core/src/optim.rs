//! SGD and Adam updates driven by privatised gradients.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub step_count: u64,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Self {
        ModelParams {
            theta,
            step_count: 0,
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, got })
    }
}

/// θ ← θ − η·g.
pub fn sgd_step(params: &mut ModelParams, grad: &[f64], eta: f64) -> Result<()> {
    check_dim(params.theta.len(), grad.len())?;
    params
        .theta
        .iter_mut()
        .zip(grad)
        .for_each(|(t, g)| *t -= eta * g);
    params.step_count += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Stabiliser added to √û.
    pub z: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            z: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    /// Second moment (written v in the bias-corrected form).
    pub u: Vec<f64>,
    pub config: AdamConfig,
    pub t: i32,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Result<Self> {
        let AdamConfig { beta1, beta2, z } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(z > 0.0) {
            return Err(domain(format!(
                "Adam needs beta1, beta2 in [0,1) and z > 0, got {beta1}, {beta2}, {z}"
            )));
        }
        Ok(AdamState {
            m: vec![0.0; dim],
            u: vec![0.0; dim],
            config,
            t: 0,
        })
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    grad: &[f64],
    eta: f64,
) -> Result<()> {
    check_dim(params.theta.len(), grad.len())?;
    check_dim(params.theta.len(), state.m.len())?;
    let AdamConfig { beta1, beta2, z } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t);
    let c2 = 1.0 - beta2.powi(state.t);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.u[i] = beta2 * state.u[i] + (1.0 - beta2) * (g * g);
        let m_hat = state.m[i] / c1;
        let u_hat = state.u[i] / c2;
        params.theta[i] -= eta * (m_hat / (u_hat.sqrt() + z));
    }
    params.step_count += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam(AdamConfig),
}

/// Optimiser state owned by a training run.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, dim: usize) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam(cfg) => Optimizer::Adam(AdamState::new(dim, cfg)?),
        })
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64], eta: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, grad, eta),
            Optimizer::Adam(state) => adam_step(params, state, grad, eta),
        }
    }
}

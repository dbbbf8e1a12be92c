//! Small differentiable classifiers with exact per-sample gradients.
//!
//! Parameters are a flat vector. Layouts:
//! - binary logistic regression: `[w (d), b]`
//! - multinomial logistic regression: `[W (K×d, row-major), b (K)]`
//! - one-hidden-layer tanh MLP: `[W1 (H×d), b1 (H), W2 (K×H), b2 (K)]`
//!
//! All losses are cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mech::GradientBatch;
use crate::rng::{step_rng, SETUP_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp1Hidden { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities in place; returns ln Σ exp(z).
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim >= 1 and >= 2 classes, got {input_dim} and {num_classes}"
            )));
        }
        if let ModelKind::Mlp1Hidden { hidden: 0 } = kind {
            return Err(Error::Config("hidden layer width must be >= 1".into()));
        }
        Ok(Model {
            kind,
            input_dim,
            num_classes,
        })
    }

    /// Binary logistic regression uses a single logit.
    fn is_binary_logistic(&self) -> bool {
        matches!(self.kind, ModelKind::LogisticRegression) && self.num_classes == 2
    }

    pub fn num_params(&self) -> usize {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression if k == 2 => d + 1,
            ModelKind::LogisticRegression => k * (d + 1),
            ModelKind::Mlp1Hidden { hidden } => hidden * (d + 1) + k * (hidden + 1),
        }
    }

    /// Zeros for logistic regression; scaled uniform weights for the MLP.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut theta = vec![0.0; self.num_params()];
        if let ModelKind::Mlp1Hidden { hidden } = self.kind {
            let d = self.input_dim;
            let mut rng = step_rng(seed ^ 0x6d6c_705f_696e_6974, SETUP_STREAM);
            let r1 = (6.0 / (d + hidden) as f64).sqrt();
            let r2 = (6.0 / (hidden + self.num_classes) as f64).sqrt();
            let (w1, rest) = theta.split_at_mut(hidden * d);
            let (_, rest) = rest.split_at_mut(hidden);
            let (w2, _) = rest.split_at_mut(self.num_classes * hidden);
            w1.iter_mut().for_each(|w| *w = rng.random_range(-r1..r1));
            w2.iter_mut().for_each(|w| *w = rng.random_range(-r2..r2));
        }
        theta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::DimMismatch {
                expected: self.num_params(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Per-sample loss; writes ∂loss/∂θ into `grad` when given.
    pub fn loss_and_grad(&self, theta: &[f64], x: &[f64], y: usize, grad: Option<&mut [f64]>) -> f64 {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression if k == 2 => {
                let z = dot(&theta[..d], x) + theta[d];
                let yf = y as f64;
                if let Some(g) = grad {
                    let r = sigmoid(z) - yf;
                    g[..d].iter_mut().zip(x).for_each(|(gi, xi)| *gi = r * xi);
                    g[d] = r;
                }
                softplus(z) - yf * z
            }
            ModelKind::LogisticRegression => {
                let (w, b) = theta.split_at(k * d);
                let mut z: Vec<f64> = (0..k).map(|c| dot(&w[c * d..(c + 1) * d], x) + b[c]).collect();
                let raw_y = z[y];
                let lse = softmax_in_place(&mut z);
                if let Some(g) = grad {
                    let (gw, gb) = g.split_at_mut(k * d);
                    for c in 0..k {
                        let r = z[c] - if c == y { 1.0 } else { 0.0 };
                        gw[c * d..(c + 1) * d]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(gi, xi)| *gi = r * xi);
                        gb[c] = r;
                    }
                }
                lse - raw_y
            }
            ModelKind::Mlp1Hidden { hidden: h } => {
                let (w1, rest) = theta.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let act: Vec<f64> = (0..h)
                    .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
                    .collect();
                let mut z: Vec<f64> = (0..k)
                    .map(|c| dot(&w2[c * h..(c + 1) * h], &act) + b2[c])
                    .collect();
                let raw_y = z[y];
                let lse = softmax_in_place(&mut z);
                if let Some(g) = grad {
                    let (gw1, rest) = g.split_at_mut(h * d);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(k * h);
                    let dz: Vec<f64> = (0..k)
                        .map(|c| z[c] - if c == y { 1.0 } else { 0.0 })
                        .collect();
                    for c in 0..k {
                        gw2[c * h..(c + 1) * h]
                            .iter_mut()
                            .zip(&act)
                            .for_each(|(gi, a)| *gi = dz[c] * a);
                        gb2[c] = dz[c];
                    }
                    for j in 0..h {
                        let back: f64 = (0..k).map(|c| w2[c * h + j] * dz[c]).sum();
                        let da = back * (1.0 - act[j] * act[j]);
                        gw1[j * d..(j + 1) * d]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(gi, xi)| *gi = da * xi);
                        gb1[j] = da;
                    }
                }
                lse - raw_y
            }
        }
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        if self.is_binary_logistic() {
            let d = self.input_dim;
            return usize::from(dot(&theta[..d], x) + theta[d] > 0.0);
        }
        let (d, k) = (self.input_dim, self.num_classes);
        let logits: Vec<f64> = match self.kind {
            ModelKind::LogisticRegression => {
                let (w, b) = theta.split_at(k * d);
                (0..k).map(|c| dot(&w[c * d..(c + 1) * d], x) + b[c]).collect()
            }
            ModelKind::Mlp1Hidden { hidden: h } => {
                let (w1, rest) = theta.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let act: Vec<f64> = (0..h)
                    .map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh())
                    .collect();
                (0..k).map(|c| dot(&w2[c * h..(c + 1) * h], &act) + b2[c]).collect()
            }
        };
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Analytic bound G on ‖∂f(θ, x)/∂θ‖ over inputs with ‖x‖ ≤ `input_norm`.
    ///
    /// Logistic models do not depend on θ. The MLP bound uses the current
    /// output-layer weights, since tanh activations are bounded by 1.
    pub fn gradient_bound(&self, theta: &[f64], input_norm: f64) -> f64 {
        let xb2 = input_norm * input_norm + 1.0;
        match self.kind {
            ModelKind::LogisticRegression if self.num_classes == 2 => xb2.sqrt(),
            // Σ_c (p_c − y_c)² ≤ 2
            ModelKind::LogisticRegression => (2.0 * xb2).sqrt(),
            ModelKind::Mlp1Hidden { hidden: h } => {
                let (d, k) = (self.input_dim, self.num_classes);
                let w2 = &theta[h * (d + 1)..h * (d + 1) + k * h];
                let w2_fro2: f64 = w2.iter().map(|w| w * w).sum();
                (2.0 * (h as f64 + 1.0) + 2.0 * w2_fro2 * xb2).sqrt()
            }
        }
    }
}

/// Per-sample gradients for `indices` plus the summed loss over them.
pub fn per_sample_grads(
    model: &Model,
    theta: &[f64],
    data: &Dataset,
    indices: &[usize],
) -> Result<(GradientBatch, f64)> {
    model.check_theta(theta)?;
    if data.dim() != model.input_dim {
        return Err(Error::DimMismatch {
            expected: model.input_dim,
            got: data.dim(),
        });
    }
    let mut batch = GradientBatch::new(model.num_params());
    let mut g = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for &i in indices {
        if i >= data.len() {
            return Err(Error::Domain(format!("sample index {i} out of range")));
        }
        loss += model.loss_and_grad(theta, data.x(i), data.y(i), Some(&mut g));
        batch.push(&g, i)?;
    }
    Ok((batch, loss))
}

/// ∇L(θ) and L(θ) over the whole dataset.
pub fn full_gradient(model: &Model, theta: &[f64], data: &Dataset) -> Result<(Vec<f64>, f64)> {
    model.check_theta(theta)?;
    let n = data.len();
    let mut total = vec![0.0; model.num_params()];
    let mut g = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for i in 0..n {
        loss += model.loss_and_grad(theta, data.x(i), data.y(i), Some(&mut g));
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    let inv = 1.0 / n.max(1) as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    Ok((total, loss * inv))
}

/// Fraction of rows classified correctly.
pub fn accuracy(model: &Model, theta: &[f64], data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = (0..data.len())
        .filter(|&i| model.predict(theta, data.x(i)) == data.y(i))
        .count();
    correct as f64 / data.len() as f64
}

//! Measurable pieces of the utility analysis: the privacy-noise variance
//! terms, the noise shapes that minimise them, the clipping probability and
//! the gradient-norm stability metric.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{domain, Error, Result};
use crate::mech::l2_norm;
use crate::model::{per_sample_grads, Model};
use crate::train::TrainHistory;

/// Trailing window for the stability variance.
pub const STABILITY_WINDOW: usize = 50;

fn check_shapes(c_t: &[f64], sigma_tilde_t: &[f64]) -> Result<()> {
    if c_t.len() != sigma_tilde_t.len() {
        return Err(Error::DimMismatch {
            expected: c_t.len(),
            got: sigma_tilde_t.len(),
        });
    }
    if c_t.is_empty() {
        return Err(domain("empty schedule"));
    }
    if c_t.iter().chain(sigma_tilde_t).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(domain("entries must be finite and positive"));
    }
    Ok(())
}

/// D1 = p² · (2/μ_tot²) · (1/T) · (Σ σ̃_t²) · (Σ C_t²/σ̃_t²).
pub fn d1_term(c_t: &[f64], sigma_tilde_t: &[f64], p: f64, mu_tot: f64, steps: usize) -> Result<f64> {
    check_shapes(c_t, sigma_tilde_t)?;
    let s2: f64 = sigma_tilde_t.iter().map(|s| s * s).sum();
    let ratio: f64 = c_t
        .iter()
        .zip(sigma_tilde_t)
        .map(|(c, s)| (c / s) * (c / s))
        .sum();
    Ok(p * p * (2.0 / (mu_tot * mu_tot)) / steps as f64 * s2 * ratio)
}

/// Curvature-weighted analogue:
/// D2 = p² · (2/μ_tot²) · (1/T) · (Σ (Q_t/2) σ̃_t²) · (Σ C_t²/σ̃_t²).
pub fn d2_term(
    c_t: &[f64],
    sigma_tilde_t: &[f64],
    q_t: &[f64],
    p: f64,
    mu_tot: f64,
    steps: usize,
) -> Result<f64> {
    check_shapes(c_t, sigma_tilde_t)?;
    check_shapes(c_t, q_t)?;
    let weighted: f64 = sigma_tilde_t
        .iter()
        .zip(q_t)
        .map(|(s, q)| 0.5 * q * s * s)
        .sum();
    let ratio: f64 = c_t
        .iter()
        .zip(sigma_tilde_t)
        .map(|(c, s)| (c / s) * (c / s))
        .sum();
    Ok(p * p * (2.0 / (mu_tot * mu_tot)) / steps as f64 * weighted * ratio)
}

/// σ̃_t = √C_t, the minimiser of D1 for a fixed clipping sequence.
pub fn optimal_sigma_shape(c_t: &[f64]) -> Vec<f64> {
    c_t.iter().map(|c| c.sqrt()).collect()
}

/// σ̃_t = √C_t / Q_t^{1/4}, the minimiser of D2.
pub fn optimal_sigma_shape_curvature(c_t: &[f64], q_t: &[f64]) -> Result<Vec<f64>> {
    check_shapes(c_t, q_t)?;
    Ok(c_t
        .iter()
        .zip(q_t)
        .map(|(c, q)| c.sqrt() / q.powf(0.25))
        .collect())
}

/// The per-step gradient-norm series and its trailing-window variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub norms: Vec<f64>,
    /// Population variance over the last `STABILITY_WINDOW` entries (fewer at
    /// the start of the run).
    pub windowed_variance: Vec<f64>,
}

impl StabilitySeries {
    /// Mean windowed variance over the final quarter of the run.
    pub fn late_phase_variance(&self) -> f64 {
        let n = self.windowed_variance.len();
        let start = n - n / 4;
        let tail = &self.windowed_variance[start.min(n.saturating_sub(1))..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

pub fn windowed_variance(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let w = &series[(i + 1).saturating_sub(window)..=i];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64
        })
        .collect()
}

pub fn stability_metric(history: &TrainHistory) -> StabilitySeries {
    let norms: Vec<f64> = history.records.iter().map(|r| r.avg_coord_grad_norm).collect();
    let windowed_variance = windowed_variance(&norms, STABILITY_WINDOW);
    StabilitySeries {
        norms,
        windowed_variance,
    }
}

/// Empirical P_t(C_t) per step.
pub fn clip_probability(history: &TrainHistory) -> Vec<f64> {
    history.records.iter().map(|r| r.clip_fraction).collect()
}

/// Fraction of per-sample gradient norms above each threshold, at fixed θ.
pub fn clip_fraction_sweep(
    model: &Model,
    theta: &[f64],
    data: &Dataset,
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (batch, _) = per_sample_grads(model, theta, data, &all)?;
    let norms: Vec<f64> = batch.rows().map(l2_norm).collect();
    let n = norms.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&c| norms.iter().filter(|&&g| g > c).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    /// D1 for the run's own noise shape.
    pub d1: f64,
    /// D1 had the same clipping sequence used σ̃_t = √C_t.
    pub d1_optimal_shape: f64,
    /// Mean over evaluated steps of ‖∇L(θ_t)‖ · P_t(C_t) · G; `None` unless
    /// full-gradient norms were tracked.
    pub bias_proxy: Option<f64>,
    #[serde(rename = "G")]
    pub g_bound: f64,
    /// Secant curvature estimates along the trajectory; heuristic only.
    #[serde(rename = "Q_t")]
    pub q_t: Option<Vec<f64>>,
}

/// Summarises a finished run. The noise shape is taken as σ_t itself since
/// D1 is invariant to rescaling σ̃_t.
pub fn theory_report(
    history: &TrainHistory,
    p: f64,
    mu_tot: f64,
    g_bound: f64,
) -> Result<TheoryReport> {
    let recs = &history.records;
    let c_t: Vec<f64> = recs.iter().map(|r| r.c_t).collect();
    let sigma_t: Vec<f64> = recs.iter().map(|r| r.sigma_t).collect();
    let steps = recs.len();
    let (d1, d1_optimal_shape) = if c_t.iter().chain(&sigma_t).all(|v| *v > 0.0 && v.is_finite()) && steps > 0 {
        (
            d1_term(&c_t, &sigma_t, p, mu_tot, steps)?,
            d1_term(&c_t, &optimal_sigma_shape(&c_t), p, mu_tot, steps)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let evaluated: Vec<f64> = recs
        .iter()
        .filter_map(|r| r.full_grad_norm.map(|g| g * r.clip_fraction * g_bound))
        .collect();
    let bias_proxy =
        (!evaluated.is_empty()).then(|| evaluated.iter().sum::<f64>() / evaluated.len() as f64);
    let q: Vec<f64> = recs.iter().filter_map(|r| r.curvature).collect();
    Ok(TheoryReport {
        d1,
        d1_optimal_shape,
        bias_proxy,
        g_bound,
        q_t: (!q.is_empty()).then_some(q),
    })
}

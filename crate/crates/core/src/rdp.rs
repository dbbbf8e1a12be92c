//! Rényi-DP upper bound for Poisson-subsampled Gaussian steps.
//!
//! Used as an independent accountant that brackets the CLT estimate from
//! above. Integer orders only; for integer α the subsampled Gaussian moment is
//!
//! ```text
//! A_α = Σ_{k=0}^{α} C(α,k) (1−q)^{α−k} q^k exp((k²−k)/(2s²))
//! ```
//!
//! with s the noise multiplier σ/C, and ε(α) = ln(A_α)/(α−1).

use log::warn;
use serde::Serialize;

use crate::accountant::eps_consumption_curve;
use crate::error::{domain, Result};
use crate::planner::DpPlan;

/// Integers 2..=64 followed by 96 and 128.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([96, 128]).collect()
}

fn ln_factorials(n: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-step RDP ε(α) of the subsampled Gaussian with sampling rate `p` and
/// noise multiplier σ/C. Returns `None` when the bound is not finite.
pub fn rdp_step(alpha: u32, p: f64, noise_multiplier: f64) -> Result<Option<f64>> {
    if alpha < 2 {
        return Err(domain(format!("RDP order must be >= 2, got {alpha}")));
    }
    if !(noise_multiplier > 0.0) || !noise_multiplier.is_finite() {
        return Err(domain(format!(
            "noise multiplier must be finite and > 0, got {noise_multiplier}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("sampling rate must lie in [0,1], got {p}")));
    }
    if p == 0.0 {
        return Ok(Some(0.0));
    }
    let a = alpha as f64;
    let two_s2 = 2.0 * noise_multiplier * noise_multiplier;
    if p == 1.0 {
        let v = a / two_s2;
        return Ok(v.is_finite().then_some(v));
    }
    let ln_fact = ln_factorials(alpha);
    let ln_q = p.ln();
    let ln_1mq = (-p).ln_1p();
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let ln_binom = ln_fact[alpha as usize] - ln_fact[k as usize] - ln_fact[(alpha - k) as usize];
        let term = ln_binom + kf * ln_q + (a - kf) * ln_1mq + (kf * kf - kf) / two_s2;
        log_a = log_add(log_a, term);
    }
    // A_α ≥ 1 mathematically; guard against rounding just below it
    let v = log_a.max(0.0) / (a - 1.0);
    Ok(v.is_finite().then_some(v))
}

/// Accumulated RDP per order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub eps_alpha: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<u32>) -> Self {
        let n = orders.len();
        RdpCurve {
            orders,
            eps_alpha: vec![0.0; n],
        }
    }

    /// Adds one step; orders whose bound overflows are removed.
    pub fn compose_step(&mut self, p: f64, noise_multiplier: f64) -> Result<()> {
        let mut keep = Vec::with_capacity(self.orders.len());
        for (i, &alpha) in self.orders.iter().enumerate() {
            match rdp_step(alpha, p, noise_multiplier)? {
                Some(e) if (self.eps_alpha[i] + e).is_finite() => {
                    keep.push((alpha, self.eps_alpha[i] + e))
                }
                _ => warn!("dropping RDP order {alpha}: bound overflowed"),
            }
        }
        self.orders = keep.iter().map(|k| k.0).collect();
        self.eps_alpha = keep.iter().map(|k| k.1).collect();
        Ok(())
    }

    /// Adds another curve's per-order values; orders missing from `other`
    /// are dropped.
    pub fn add(&mut self, other: &RdpCurve) {
        let mut orders = Vec::with_capacity(self.orders.len());
        let mut eps = Vec::with_capacity(self.orders.len());
        for (alpha, e) in self.orders.iter().zip(&self.eps_alpha) {
            if let Some(j) = other.orders.iter().position(|o| o == alpha) {
                orders.push(*alpha);
                eps.push(e + other.eps_alpha[j]);
            }
        }
        self.orders = orders;
        self.eps_alpha = eps;
    }

    /// ε = min_α [ε(α) + ln(1/δ)/(α−1)].
    pub fn to_eps(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(domain(format!("delta must lie in (0,1), got {delta}")));
        }
        let log_inv_delta = -delta.ln();
        self.orders
            .iter()
            .zip(&self.eps_alpha)
            .map(|(&a, &e)| e + log_inv_delta / (a as f64 - 1.0))
            .min_by(|a, b| a.total_cmp(b))
            .ok_or_else(|| domain("no RDP orders left"))
    }
}

/// Running RDP upper bound (step, ε) for a plan over the default orders.
pub fn audit_plan(plan: &DpPlan, delta: f64) -> Result<Vec<(usize, f64)>> {
    audit_schedule(&plan.mu_t, plan.hyper.sampling_rate, delta, default_orders())
}

/// Running RDP upper bound for an arbitrary μ_t sequence.
pub fn audit_schedule(
    mu_t: &[f64],
    p: f64,
    delta: f64,
    orders: Vec<u32>,
) -> Result<Vec<(usize, f64)>> {
    if mu_t.is_empty() {
        return Err(domain("cannot audit an empty schedule"));
    }
    let mut curve = RdpCurve::new(orders);
    let mut out = Vec::with_capacity(mu_t.len());
    let mut cached: Option<(f64, RdpCurve)> = None;
    for (i, &mu) in mu_t.iter().enumerate() {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(domain(format!("step {}: mu must be finite and > 0", i + 1)));
        }
        let s = 1.0 / mu;
        // flat stretches of the schedule reuse the per-step vector
        let step = match &cached {
            Some((prev, step)) if *prev == s && step.orders == curve.orders => step.clone(),
            _ => {
                let mut step = RdpCurve::new(curve.orders.clone());
                step.compose_step(p, s)?;
                cached = Some((s, step.clone()));
                step
            }
        };
        curve.add(&step);
        out.push((i + 1, curve.to_eps(delta)?));
    }
    Ok(out)
}

/// One row of the CLT-versus-RDP comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichRow {
    pub step: usize,
    pub eps_gdp_clt: f64,
    pub eps_rdp_upper: f64,
}

/// CLT consumption curve paired with the RDP upper bound at every step.
pub fn sandwich(plan: &DpPlan, delta: f64) -> Result<Vec<SandwichRow>> {
    let clt = eps_consumption_curve(&plan.mu_t, plan.hyper.sampling_rate, delta)?;
    let rdp = audit_plan(plan, delta)?;
    Ok(clt
        .into_iter()
        .zip(rdp)
        .map(|(c, (step, r))| SandwichRow {
            step,
            eps_gdp_clt: c,
            eps_rdp_upper: r,
        })
        .collect())
}

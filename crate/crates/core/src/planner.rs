//! Per-step clipping and noise schedules under a total GDP budget.
//!
//! The combined dynamic schedule uses, for t = 1..T,
//!
//! ```text
//! μ_t = ρ_μ^{t/T} · μ₀
//! C_t = ρ_c^{−t/T} · C₀
//! σ_t = (C₀/μ₀) · (ρ_μ ρ_c)^{−t/T}
//! ```
//!
//! with μ₀ chosen so the CLT composition of {μ_t} equals μ_tot. ρ_c = 1 gives
//! the growing-μ method, ρ_μ = 1 gives sensitivity decay, and both equal to 1
//! gives the flat vanilla schedule.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::accountant::{
    compose_clt, eps_consumption_curve, mu_of, GdpLevel, PrivacyBudget, BISECTION_MAX_ITER,
    MAX_STEP_MU,
};
use crate::error::{domain, ensure_finite, Error, Result};

/// Lower end of the μ₀ search bracket; the upper end is `MAX_STEP_MU / ρ_μ`.
pub const MU0_BRACKET_LO: f64 = 1e-8;

/// Default hyper-parameter grid for sweeps, expressed as 1/ρ.
pub const SWEEP_INV_RHO: [f64; 8] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleHyperparams {
    /// Total number of steps T.
    pub steps: usize,
    /// Per-record Poisson sampling rate p.
    pub sampling_rate: f64,
    pub rho_mu: f64,
    pub rho_c: f64,
    /// Initial clipping threshold C₀.
    pub c0: f64,
}

impl ScheduleHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(domain("steps must be >= 1"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(domain(format!(
                "sampling rate must lie in (0,1], got {}",
                self.sampling_rate
            )));
        }
        for (name, v) in [("rho_mu", self.rho_mu), ("rho_c", self.rho_c)] {
            ensure_finite(name, v)?;
            if v < 1.0 {
                return Err(domain(format!("{name} must be >= 1, got {v}")));
            }
        }
        ensure_finite("c0", self.c0)?;
        if self.c0 <= 0.0 {
            return Err(domain(format!("c0 must be > 0, got {}", self.c0)));
        }
        Ok(())
    }
}

/// Which of the schedule families a pair of ρ values represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Growmu,
    Sensdecay,
    Dynamic,
}

impl Method {
    /// Maps a method onto (ρ_μ, ρ_c) given the user's preferred ratios.
    /// Ratios that the method pins to 1 are overridden.
    pub fn rhos(self, rho_mu: f64, rho_c: f64) -> (f64, f64) {
        match self {
            Method::Vanilla => (1.0, 1.0),
            Method::Growmu => (rho_mu, 1.0),
            Method::Sensdecay => (1.0, rho_c),
            Method::Dynamic => (rho_mu, rho_c),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "growmu" => Ok(Method::Growmu),
            "sensdecay" => Ok(Method::Sensdecay),
            "dynamic" => Ok(Method::Dynamic),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// A fully calibrated schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpPlan {
    pub hyper: ScheduleHyperparams,
    pub mu0: f64,
    pub mu_t: Vec<f64>,
    #[serde(rename = "C_t")]
    pub c_t: Vec<f64>,
    pub sigma_t: Vec<f64>,
    pub budget: PrivacyBudget,
    pub mu_tot: GdpLevel,
}

/// Exponent `t/T` for the 1-based step index.
fn phase(t: usize, steps: usize) -> f64 {
    t as f64 / steps as f64
}

/// μ_t = ρ_μ^{t/T} · μ₀ for t = 1..T.
pub fn mu_schedule(mu0: f64, rho_mu: f64, steps: usize) -> Result<Vec<f64>> {
    ensure_finite("mu0", mu0)?;
    if mu0 <= 0.0 {
        return Err(domain(format!("mu0 must be > 0, got {mu0}")));
    }
    if !(rho_mu >= 1.0) || !rho_mu.is_finite() {
        return Err(domain(format!("rho_mu must be finite and >= 1, got {rho_mu}")));
    }
    Ok((1..=steps)
        .map(|t| rho_mu.powf(phase(t, steps)) * mu0)
        .collect())
}

/// p² · Σ_{t=1}^{T} (exp{(ρ_μ^{t/T} μ₀)²} − 1)
fn composed_square(mu0: f64, p: f64, steps: usize, rho_mu: f64) -> f64 {
    let sum: f64 = (1..=steps)
        .map(|t| {
            let mu = rho_mu.powf(phase(t, steps)) * mu0;
            (mu * mu).exp_m1()
        })
        .sum();
    p * p * sum
}

/// Solves for μ₀ so that the schedule composes exactly to `mu_tot`.
///
/// ρ_μ = 1 uses the closed form `sqrt(ln(μ_tot²/(p²T) + 1))`; otherwise the
/// monotone defining equation is bisected on `[1e-8, 6/ρ_μ]`.
pub fn solve_mu0(mu_tot: GdpLevel, p: f64, steps: usize, rho_mu: f64) -> Result<f64> {
    if steps == 0 {
        return Err(domain("steps must be >= 1"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("sampling rate must lie in (0,1], got {p}")));
    }
    if !(rho_mu >= 1.0) || !rho_mu.is_finite() {
        return Err(domain(format!("rho_mu must be finite and >= 1, got {rho_mu}")));
    }
    if rho_mu == 1.0 {
        let m = mu_tot.value();
        let mu0 = (m * m / (p * p * steps as f64)).ln_1p().sqrt();
        if mu0 > MAX_STEP_MU {
            return Err(Error::Range(format!(
                "mu_tot {m} requires per-step mu {mu0} > {MAX_STEP_MU}"
            )));
        }
        return Ok(mu0);
    }
    solve_mu0_bisect(mu_tot, p, steps, rho_mu)
}

/// Bisection route for μ₀, valid for every ρ_μ ≥ 1.
pub fn solve_mu0_bisect(mu_tot: GdpLevel, p: f64, steps: usize, rho_mu: f64) -> Result<f64> {
    let target = mu_tot.value() * mu_tot.value();
    let mut lo = MU0_BRACKET_LO;
    let mut hi = MAX_STEP_MU / rho_mu;
    if composed_square(hi, p, steps, rho_mu) < target {
        return Err(Error::Range(format!(
            "mu_tot {} is unreachable: final per-step mu would exceed {MAX_STEP_MU}",
            mu_tot.value()
        )));
    }
    if composed_square(lo, p, steps, rho_mu) > target {
        return Err(Error::Range(format!(
            "mu_tot {} requires mu0 below {MU0_BRACKET_LO}",
            mu_tot.value()
        )));
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if composed_square(mid, p, steps, rho_mu) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Builds the full dynamic schedule for a budget.
pub fn build_plan(budget: PrivacyBudget, hyper: ScheduleHyperparams) -> Result<DpPlan> {
    budget.validate()?;
    hyper.validate()?;
    let mu_tot = mu_of(budget)?;
    let steps = hyper.steps;
    let mu0 = solve_mu0(mu_tot, hyper.sampling_rate, steps, hyper.rho_mu)?;
    let mu_t = mu_schedule(mu0, hyper.rho_mu, steps)?;
    let rho = hyper.rho_mu * hyper.rho_c;
    let c_t = (1..=steps)
        .map(|t| hyper.rho_c.powf(-phase(t, steps)) * hyper.c0)
        .collect();
    let sigma_t = (1..=steps)
        .map(|t| (hyper.c0 / mu0) * rho.powf(-phase(t, steps)))
        .collect();
    if mu_t.iter().any(|&m| m > 1.0) {
        warn!("schedule has per-step mu above 1 (max {:.4})", mu_t[steps - 1]);
    }
    Ok(DpPlan {
        hyper,
        mu0,
        mu_t,
        c_t,
        sigma_t,
        budget,
        mu_tot,
    })
}

impl DpPlan {
    pub fn steps(&self) -> usize {
        self.mu_t.len()
    }

    /// Running ε consumed by the schedule at the plan's δ.
    pub fn consumption_curve(&self) -> Result<Vec<f64>> {
        eps_consumption_curve(&self.mu_t, self.hyper.sampling_rate, self.budget.delta)
    }

    /// Checks the structural invariants of a plan, e.g. after deserialising.
    pub fn check(&self) -> Result<()> {
        self.hyper.validate()?;
        self.budget.validate()?;
        let n = self.hyper.steps;
        if n == 0 || self.mu_t.len() != n || self.c_t.len() != n || self.sigma_t.len() != n {
            return Err(Error::Config(format!(
                "plan arrays must all have length steps = {n}"
            )));
        }
        for t in 0..n {
            let ratio = self.c_t[t] / self.sigma_t[t];
            if !ratio.is_finite() || (ratio - self.mu_t[t]).abs() > 1e-12 * self.mu_t[t].abs() {
                return Err(Error::Config(format!(
                    "step {}: C_t/sigma_t = {ratio} disagrees with mu_t = {}",
                    t + 1,
                    self.mu_t[t]
                )));
            }
        }
        let composed = compose_clt(&self.mu_t, self.hyper.sampling_rate)?;
        let target = self.mu_tot.value();
        if (composed - target).abs() > 1e-8 * target {
            return Err(Error::Config(format!(
                "schedule composes to mu = {composed}, plan states {target}"
            )));
        }
        Ok(())
    }
}

/// Arbitrary clipping sequence with noise σ_t = σ̃ · σ̃_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralPlan {
    pub c_t: Vec<f64>,
    pub sigma_tilde_t: Vec<f64>,
    pub sigma_tilde: f64,
    pub sampling_rate: f64,
}

/// Global noise scale and the per-step μ ≤ 1 check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaTilde {
    pub value: f64,
    /// Number of steps with C_t/(σ̃ σ̃_t) > 1.
    pub violations: usize,
}

/// σ̃ = (p/μ_tot) · sqrt(2 Σ_t C_t²/σ̃_t²).
pub fn sigma_tilde_for(
    c_t: &[f64],
    sigma_tilde_t: &[f64],
    p: f64,
    mu_tot: GdpLevel,
) -> Result<SigmaTilde> {
    if c_t.len() != sigma_tilde_t.len() {
        return Err(Error::DimMismatch {
            expected: c_t.len(),
            got: sigma_tilde_t.len(),
        });
    }
    if c_t.is_empty() {
        return Err(domain("empty schedule"));
    }
    if c_t.iter().chain(sigma_tilde_t).any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(domain("clipping thresholds and noise shapes must be positive"));
    }
    let sum: f64 = c_t
        .iter()
        .zip(sigma_tilde_t)
        .map(|(c, s)| (c / s) * (c / s))
        .sum();
    let value = p / mu_tot.value() * (2.0 * sum).sqrt();
    let violations = c_t
        .iter()
        .zip(sigma_tilde_t)
        .filter(|(c, s)| **c / (value * **s) > 1.0)
        .count();
    if violations > 0 {
        warn!("{violations} steps have per-step mu above 1; the linearised bound does not apply");
    }
    Ok(SigmaTilde { value, violations })
}

impl GeneralPlan {
    pub fn new(c_t: Vec<f64>, sigma_tilde_t: Vec<f64>, p: f64, mu_tot: GdpLevel) -> Result<Self> {
        let st = sigma_tilde_for(&c_t, &sigma_tilde_t, p, mu_tot)?;
        Ok(GeneralPlan {
            c_t,
            sigma_tilde_t,
            sigma_tilde: st.value,
            sampling_rate: p,
        })
    }

    pub fn sigma_t(&self) -> Vec<f64> {
        self.sigma_tilde_t.iter().map(|s| s * self.sigma_tilde).collect()
    }

    pub fn mu_t(&self) -> Vec<f64> {
        self.c_t
            .iter()
            .zip(&self.sigma_tilde_t)
            .map(|(c, s)| c / (self.sigma_tilde * s))
            .collect()
    }
}

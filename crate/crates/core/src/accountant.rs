//! Gaussian differential privacy accounting.
//!
//! A μ-GDP mechanism has the (ε, δ) privacy profile
//!
//! ```text
//! δ(ε; μ) = Φ(−ε/μ + μ/2) − e^ε · Φ(−ε/μ − μ/2)
//! ```
//!
//! and T Poisson-subsampled steps with per-step levels μ_t compose, in the
//! central-limit regime, to `μ_tot = p · sqrt(Σ_t (e^{μ_t²} − 1))`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_finite, Error, Result};
use crate::special::{log_normal_cdf, normal_cdf};

/// Lower end of the μ search bracket used by [`mu_of`].
pub const MU_BRACKET_LO: f64 = 1e-6;
/// Upper end of the μ search bracket used by [`mu_of`].
pub const MU_BRACKET_HI: f64 = 50.0;
/// Absolute bisection tolerance.
pub const BISECTION_TOL: f64 = 1e-12;
pub const BISECTION_MAX_ITER: usize = 200;
/// Per-step μ above which e^{μ²} is considered numerically unsafe.
pub const MAX_STEP_MU: f64 = 6.0;
/// Below this many steps the CLT composition is flagged as possibly loose.
pub const CLT_MIN_STEPS: usize = 200;

/// A target (ε, δ) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub eps: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        let b = PrivacyBudget { eps, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("eps", self.eps)?;
        ensure_finite("delta", self.delta)?;
        if self.eps < 0.0 {
            return Err(domain(format!("eps must be >= 0, got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(domain(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// A Gaussian DP level μ = C/σ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GdpLevel(f64);

impl GdpLevel {
    pub fn new(mu: f64) -> Result<Self> {
        ensure_finite("mu", mu)?;
        if mu <= 0.0 {
            return Err(domain(format!("mu must be > 0, got {mu}")));
        }
        Ok(GdpLevel(mu))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Per-step levels above 1 fall outside the regime where the linearised
    /// composition bound (e^x < 1 + 2x) holds.
    pub fn exceeds_unit(self) -> bool {
        self.0 > 1.0
    }
}

impl From<GdpLevel> for f64 {
    fn from(m: GdpLevel) -> f64 {
        m.0
    }
}

/// δ(ε; μ) for a μ-GDP mechanism, clamped to [0, 1].
pub fn delta_of(eps: f64, mu: f64) -> Result<f64> {
    ensure_finite("eps", eps)?;
    ensure_finite("mu", mu)?;
    if eps < 0.0 {
        return Err(domain(format!("eps must be >= 0, got {eps}")));
    }
    if mu <= 0.0 {
        return Err(domain(format!("mu must be > 0, got {mu}")));
    }
    Ok(delta_unchecked(eps, mu))
}

fn delta_unchecked(eps: f64, mu: f64) -> f64 {
    let ratio = eps / mu;
    let head = normal_cdf(-ratio + 0.5 * mu);
    // e^ε·Φ(b) in log space; Φ(b) underflows long before e^ε overflows.
    let tail = (eps + log_normal_cdf(-ratio - 0.5 * mu)).exp();
    (head - tail).clamp(0.0, 1.0)
}

/// The unique μ with δ(ε; μ) = δ.
pub fn mu_of(budget: PrivacyBudget) -> Result<GdpLevel> {
    budget.validate()?;
    let PrivacyBudget { eps, delta } = budget;
    let (mut lo, mut hi) = (MU_BRACKET_LO, MU_BRACKET_HI);
    if delta_unchecked(eps, hi) < delta {
        return Err(Error::Range(format!(
            "budget (eps={eps}, delta={delta}) needs mu > {MU_BRACKET_HI}"
        )));
    }
    if delta_unchecked(eps, lo) > delta {
        return Err(Error::Range(format!(
            "budget (eps={eps}, delta={delta}) needs mu < {MU_BRACKET_LO}"
        )));
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if delta_unchecked(eps, mid) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    GdpLevel::new(0.5 * (lo + hi))
}

/// Smallest ε with δ(ε; μ) ≤ δ, i.e. the ε spent by a μ-GDP mechanism at
/// failure probability δ.
pub fn eps_of(mu: f64, delta: f64) -> Result<f64> {
    ensure_finite("delta", delta)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0,1), got {delta}")));
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    delta_of(0.0, mu)?;
    eps_of_from(mu, delta, 0.0)
}

/// Like [`eps_of`] but starts the search at `eps_floor`, which the caller
/// guarantees is at most the answer.
fn eps_of_from(mu: f64, delta: f64, eps_floor: f64) -> Result<f64> {
    let mut lo = eps_floor;
    if delta_unchecked(lo, mu) <= delta {
        return Ok(lo);
    }
    let mut hi = (lo + 1.0).max(2.0 * lo);
    let mut grow = 0;
    while delta_unchecked(hi, mu) > delta {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 64 {
            return Err(Error::Range(format!("no finite eps reaches delta={delta} at mu={mu}")));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if delta_unchecked(mid, mu) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of a CLT composition together with its validity flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composition {
    pub mu_tot: f64,
    /// No steps were supplied; `mu_tot` is the 0 sentinel.
    pub empty: bool,
    /// Fewer than [`CLT_MIN_STEPS`] steps.
    pub few_steps: bool,
    /// Some per-step μ exceeds 1.
    pub large_step: bool,
}

fn validate_rate(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("sampling rate must lie in (0,1], got {p}")));
    }
    Ok(())
}

fn step_term(mu: f64) -> Result<f64> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(domain(format!("per-step mu must be finite and > 0, got {mu}")));
    }
    if mu > MAX_STEP_MU {
        return Err(domain(format!("per-step mu {mu} exceeds {MAX_STEP_MU}")));
    }
    Ok((mu * mu).exp_m1())
}

/// Extended-CLT composition with flags.
pub fn compose_clt_checked(mu_steps: &[f64], p: f64) -> Result<Composition> {
    validate_rate(p)?;
    let mut sum = 0.0;
    let mut large_step = false;
    for &mu in mu_steps {
        sum += step_term(mu)?;
        large_step |= mu > 1.0;
    }
    let comp = Composition {
        mu_tot: p * sum.sqrt(),
        empty: mu_steps.is_empty(),
        few_steps: mu_steps.len() < CLT_MIN_STEPS,
        large_step,
    };
    if comp.empty {
        warn!("composing an empty schedule; returning mu = 0");
    } else if comp.few_steps {
        warn!(
            "only {} steps composed; the CLT approximation may be loose below {CLT_MIN_STEPS}",
            mu_steps.len()
        );
    }
    Ok(comp)
}

/// μ_tot = p · sqrt(Σ_t (e^{μ_t²} − 1)).
pub fn compose_clt(mu_steps: &[f64], p: f64) -> Result<f64> {
    validate_rate(p)?;
    let mut sum = 0.0;
    for &mu in mu_steps {
        sum += step_term(mu)?;
    }
    Ok(p * sum.sqrt())
}

/// Running ε spent after each prefix of `mu_steps`.
pub fn eps_consumption_curve(mu_steps: &[f64], p: f64, delta: f64) -> Result<Vec<f64>> {
    validate_rate(p)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0,1), got {delta}")));
    }
    let mut curve = Vec::with_capacity(mu_steps.len());
    let mut sum = 0.0;
    let mut prev = 0.0;
    for &mu in mu_steps {
        sum += step_term(mu)?;
        let mu_prefix = p * sum.sqrt();
        // prefix μ is nondecreasing, so the previous ε is a valid floor
        let eps = eps_of_from(mu_prefix, delta, prev)?;
        curve.push(eps);
        prev = eps;
    }
    Ok(curve)
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // Reference values below come from 50-digit mpmath evaluations.
    const DELTA_EPS0_MU1: f64 = 0.382_924_922_548_026_2;
    const MU_TOT_1_2_1E5: f64 = 0.316_378_625_399_732_86;

    #[test]
    fn delta_at_zero_eps() {
        let d = delta_of(0.0, 1.0).unwrap();
        assert!((d - DELTA_EPS0_MU1).abs() < 1e-15);
        let sym = 2.0 * normal_cdf(0.5) - 1.0;
        assert!((d - sym).abs() < 1e-15);
    }

    #[test]
    fn delta_vanishes_for_tiny_mu() {
        assert!(delta_of(5.0, 1e-8).unwrap() < 1e-12);
    }

    #[test]
    fn delta_rejects_bad_input() {
        assert!(delta_of(f64::NAN, 1.0).is_err());
        assert!(delta_of(1.0, f64::INFINITY).is_err());
        assert!(delta_of(-1.0, 1.0).is_err());
        assert!(delta_of(1.0, 0.0).is_err());
    }

    #[test]
    fn delta_large_eps_stays_in_range() {
        for eps in [50.0, 300.0, 700.0, 1e4] {
            let d = delta_of(eps, 3.0).unwrap();
            assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn mu_of_golden() {
        let m = mu_of(PrivacyBudget::new(1.2, 1e-5).unwrap()).unwrap().value();
        assert!((m - MU_TOT_1_2_1E5).abs() < 1e-11, "{m}");
        let d = delta_of(1.2, m).unwrap();
        assert!((d - 1e-5).abs() < 1e-10);
    }

    #[test]
    fn mu_of_inverts_first_example() {
        let m = mu_of(PrivacyBudget::new(0.0, 0.382925).unwrap()).unwrap().value();
        assert!((m - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mu_of_out_of_bracket() {
        // delta so close to 1 that even mu = 50 cannot reach it at large eps
        let err = mu_of(PrivacyBudget::new(2000.0, 0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(-0.1, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(GdpLevel::new(0.0).is_err());
        assert!(GdpLevel::new(1.5).unwrap().exceeds_unit());
    }

    #[test]
    fn compose_single_step() {
        let mu1 = 5f64.ln().sqrt();
        assert!((compose_clt(&[mu1], 1.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn compose_heterogeneous_golden() {
        // p·sqrt(Σ e^{μ²}−1) for {0.1, 0.2, 0.3}, p = 0.01, at 50 digits
        let v = compose_clt(&[0.1, 0.2, 0.3], 0.01).unwrap();
        assert!((v - 0.003_808_349_051_515_192_2).abs() / v < 1e-14, "{v}");
    }

    #[test]
    fn compose_flags() {
        let c = compose_clt_checked(&[], 0.5).unwrap();
        assert!(c.empty && c.mu_tot == 0.0);
        let c = compose_clt_checked(&[1.5; 10], 0.5).unwrap();
        assert!(c.few_steps && c.large_step);
        let c = compose_clt_checked(&[0.1; 500], 0.5).unwrap();
        assert!(!c.few_steps && !c.large_step && !c.empty);
        assert!(compose_clt(&[6.5], 1.0).is_err());
        assert!(compose_clt(&[0.5], 0.0).is_err());
        assert!(compose_clt(&[0.5], 1.5).is_err());
    }

    #[test]
    fn eps_of_inverts_delta() {
        let e = eps_of(MU_TOT_1_2_1E5, 1e-5).unwrap();
        assert!((e - 1.2).abs() < 1e-9);
        assert_eq!(eps_of(0.0, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn flat_consumption_curve_golden() {
        let p = 250.0 / 60000.0;
        let t_total = 5000;
        let mu_tot = mu_of(PrivacyBudget::new(1.2, 1e-5).unwrap()).unwrap().value();
        let mu0 = (mu_tot * mu_tot / (p * p * t_total as f64)).ln_1p().sqrt();
        // mpmath: flat μ₀ = 0.87573305782538038821
        assert!((mu0 - 0.875_733_057_825_380_4).abs() < 1e-10);
        let curve = eps_consumption_curve(&vec![mu0; t_total], p, 1e-5).unwrap();
        // mpmath prefix-compose + inversion at t = T/4 and T/2
        assert!((curve[1249] - 0.561_577_092_189_204_9).abs() < 1e-8);
        assert!((curve[2499] - 0.820_156_548_878_038).abs() < 1e-8);
        assert!((curve[t_total - 1] - 1.2).abs() < 1e-6);
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    }
}

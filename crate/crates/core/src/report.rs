//! CSV and JSON writers for plans, audits, histories and theory reports.
//!
//! Floats are written with Rust's shortest round-trip formatting so equal
//! inputs give byte-identical files. Missing values are empty cells.

use std::io::Write;

use serde::Serialize;

use crate::diagnostics::TheoryReport;
use crate::error::Result;
use crate::planner::DpPlan;
use crate::rdp::SandwichRow;
use crate::train::TrainHistory;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Empty cell for values that are undefined, e.g. μ_t with σ_t = 0.
fn finite(v: f64) -> String {
    opt(Some(v).filter(|x| x.is_finite()))
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Columns: t, mu_t, C_t, sigma_t, cumulative_eps.
pub fn write_schedule_csv<W: Write>(plan: &DpPlan, w: W) -> Result<()> {
    let eps = plan.consumption_curve()?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "mu_t", "C_t", "sigma_t", "cumulative_eps"])?;
    for i in 0..plan.steps() {
        out.write_record([
            (i + 1).to_string(),
            plan.mu_t[i].to_string(),
            plan.c_t[i].to_string(),
            plan.sigma_t[i].to_string(),
            eps[i].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Long format with columns rho_mu, t, cumulative_eps; one block per plan.
pub fn write_consumption_csv<W: Write>(plans: &[DpPlan], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rho_mu", "t", "cumulative_eps"])?;
    for plan in plans {
        let rho = plan.hyper.rho_mu.to_string();
        for (i, e) in plan.consumption_curve()?.iter().enumerate() {
            out.write_record([rho.clone(), (i + 1).to_string(), e.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Columns: step, eps_gdp_clt, eps_rdp_upper.
pub fn write_sandwich_csv<W: Write>(rows: &[SandwichRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "eps_gdp_clt", "eps_rdp_upper"])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.eps_gdp_clt.to_string(),
            r.eps_rdp_upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns: step, loss, acc, clip_fraction, avg_coord_grad_norm, C_t,
/// sigma_t, mu_t, cum_eps.
pub fn write_history_csv<W: Write>(history: &TrainHistory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step",
        "loss",
        "acc",
        "clip_fraction",
        "avg_coord_grad_norm",
        "C_t",
        "sigma_t",
        "mu_t",
        "cum_eps",
    ])?;
    for r in &history.records {
        out.write_record([
            r.step.to_string(),
            opt(r.loss),
            opt(r.acc),
            r.clip_fraction.to_string(),
            r.avg_coord_grad_norm.to_string(),
            r.c_t.to_string(),
            r.sigma_t.to_string(),
            finite(r.mu_t),
            finite(r.cum_eps),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One configuration of a ρ sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub rho_mu: f64,
    pub rho_c: f64,
    pub final_test_accuracy: f64,
    pub late_phase_variance: f64,
    pub final_cum_eps: Option<f64>,
}

/// Columns: rho_mu, rho_c, final_test_accuracy, late_phase_variance,
/// final_cum_eps.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "rho_mu",
        "rho_c",
        "final_test_accuracy",
        "late_phase_variance",
        "final_cum_eps",
    ])?;
    for r in rows {
        out.write_record([
            r.rho_mu.to_string(),
            r.rho_c.to_string(),
            r.final_test_accuracy.to_string(),
            r.late_phase_variance.to_string(),
            opt(r.final_cum_eps),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_theory_json<W: Write>(report: &TheoryReport, w: W) -> Result<()> {
    write_json(report, w)
}

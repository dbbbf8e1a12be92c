//! `dyndp`: plan, audit and run dynamic DP-SGD experiments.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dyndp::diagnostics::{stability_metric, theory_report};
use dyndp::planner::{DpPlan, Method, SWEEP_INV_RHO};
use dyndp::report::{
    write_consumption_csv, write_history_csv, write_json, write_sandwich_csv, write_schedule_csv,
    write_sweep_csv, write_theory_json, SweepRow,
};
use dyndp::{
    build_plan, even_partition, fed_train, sandwich, train, train_non_private, Dataset, FedConfig,
    Model, StepSchedule, TrainConfig, TrainHistory,
};
use log::info;
use serde::Serialize;

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "dyndp", version, about = "Dynamic differentially private SGD under Gaussian DP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate a schedule; writes plan.json, schedule.csv and consumption.csv.
    Plan {
        #[command(flatten)]
        overrides: Overrides,
        /// Extra ρ_μ values whose consumption curves are added for comparison.
        #[arg(long, value_delimiter = ',')]
        compare_rho_mu: Vec<f64>,
    },
    /// Centralised training; writes history.csv, theory.json and summary.json.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Run the non-private baseline with the same sampling and optimiser.
        #[arg(long)]
        non_private: bool,
    },
    /// Federated training; requires a `federated` section in the config.
    Fedtrain {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare the CLT estimate with the RDP upper bound; writes sandwich.csv.
    Audit {
        /// A plan.json written by `dyndp plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Defaults to the plan's own δ.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the vanilla schedule and ρ_μ = ρ_c = 1/x for each x in the grid;
    /// writes sweep.csv.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',')]
        inv_rho: Vec<f64>,
    },
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn check_history(h: &TrainHistory) -> Result<()> {
    if let Some(a) = &h.aborted {
        bail!("training aborted at step {}: {}", a.step, a.reason);
    }
    let finite = h.records.iter().all(|r| {
        r.loss.is_none_or(f64::is_finite)
            && r.acc.is_none_or(f64::is_finite)
            && r.avg_coord_grad_norm.is_finite()
            && r.clip_fraction.is_finite()
    });
    if !finite || h.final_theta.iter().any(|x| !x.is_finite()) {
        bail!("training produced non-finite values");
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    final_test_accuracy: f64,
    steps: usize,
    late_phase_variance: f64,
    final_cum_eps: Option<f64>,
}

fn summary(h: &TrainHistory) -> Summary {
    let eps = h.records.last().map(|r| r.cum_eps).filter(|e| e.is_finite());
    Summary {
        final_test_accuracy: h.final_test_accuracy,
        steps: h.records.len(),
        late_phase_variance: stability_metric(h).late_phase_variance(),
        final_cum_eps: eps,
    }
}

fn train_config(cfg: &ExperimentConfig, train_d: &Dataset, schedule: StepSchedule, delta: f64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        model: Model::new(cfg.model, train_d.dim(), train_d.num_classes())?,
        optimizer: cfg.optimizer,
        eta: cfg.eta,
        schedule,
        sampling_rate: cfg.schedule.sampling_rate,
        denom: cfg.denom,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
        delta: Some(delta),
        track_theory: cfg.track_theory,
    })
}

fn write_run(dir: &Path, h: &TrainHistory, plan: Option<&DpPlan>, model: &Model, train_d: &Dataset) -> Result<()> {
    check_history(h)?;
    write_history_csv(h, create(dir, "history.csv")?)?;
    if let Some(plan) = plan {
        write_json(plan, create(dir, "plan.json")?)?;
        let g = model.gradient_bound(&h.final_theta, train_d.max_feature_norm());
        let report = theory_report(h, plan.hyper.sampling_rate, plan.mu_tot.value(), g)?;
        write_theory_json(&report, create(dir, "theory.json")?)?;
    }
    write_json(&summary(h), create(dir, "summary.json")?)?;
    info!("test accuracy {:.4}", h.final_test_accuracy);
    Ok(())
}

fn cmd_plan(overrides: &Overrides, compare: &[f64]) -> Result<()> {
    let cfg = overrides.resolve()?;
    let plan = cfg.standalone_plan()?;
    let dir = cfg.out_dir();
    write_json(&plan, create(&dir, "plan.json")?)?;
    write_schedule_csv(&plan, create(&dir, "schedule.csv")?)?;
    let mut curves = vec![plan.clone()];
    for &rho_mu in compare {
        let hyper = dyndp::ScheduleHyperparams { rho_mu, ..plan.hyper };
        curves.push(build_plan(plan.budget, hyper)?);
    }
    write_consumption_csv(&curves, create(&dir, "consumption.csv")?)?;
    info!("mu_tot {} mu0 {} written to {}", plan.mu_tot.value(), plan.mu0, dir.display());
    Ok(())
}

fn cmd_train(overrides: &Overrides, non_private: bool) -> Result<()> {
    let cfg = overrides.resolve()?;
    let (train_d, test_d) = cfg.load_data()?;
    let budget = cfg.budget(train_d.len())?;
    let dir = cfg.out_dir();
    if non_private {
        let schedule = StepSchedule::disabled(cfg.schedule.steps);
        let tc = train_config(&cfg, &train_d, schedule, budget.delta)?;
        let h = train_non_private(&tc, &train_d, &test_d)?;
        return write_run(&dir, &h, None, &tc.model, &train_d);
    }
    let plan = cfg.plan(train_d.len())?;
    let tc = train_config(&cfg, &train_d, StepSchedule::from_plan(&plan), budget.delta)?;
    let h = train(&tc, &train_d, &test_d)?;
    write_run(&dir, &h, Some(&plan), &tc.model, &train_d)
}

fn cmd_fedtrain(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let Some(fed) = &cfg.federated else {
        bail!("fedtrain needs a `federated` section with num_clients");
    };
    if fed.num_clients == 0 {
        bail!("num_clients must be >= 1");
    }
    let (train_d, test_d) = cfg.load_data()?;
    let plan = cfg.plan(train_d.len())?;
    let model = Model::new(cfg.model, train_d.dim(), train_d.num_classes())?;
    let fc = FedConfig {
        model,
        num_clients: fed.num_clients,
        client_sampling_rate: cfg.schedule.sampling_rate,
        partition: even_partition(train_d.len(), fed.num_clients),
        schedule: StepSchedule::from_plan(&plan),
        eta: cfg.eta,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
        delta: Some(plan.budget.delta),
        track_theory: cfg.track_theory,
    };
    let h = fed_train(&fc, &train_d, &test_d)?;
    write_run(&cfg.out_dir(), &h, Some(&plan), &model, &train_d)
}

fn cmd_audit(plan_path: &Path, delta: Option<f64>, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(plan_path)
        .with_context(|| format!("reading plan {}", plan_path.display()))?;
    let plan: DpPlan = serde_json::from_str(&text)
        .with_context(|| format!("parsing plan {}", plan_path.display()))?;
    plan.check().context("invalid plan")?;
    let rows = sandwich(&plan, delta.unwrap_or(plan.budget.delta))?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("DYNDP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    write_sandwich_csv(&rows, create(&dir, "sandwich.csv")?)?;
    Ok(())
}

fn cmd_sweep(overrides: &Overrides, inv_rho: &[f64]) -> Result<()> {
    let base = overrides.resolve()?;
    let (train_d, test_d) = base.load_data()?;
    let grid: Vec<f64> = if inv_rho.is_empty() { SWEEP_INV_RHO.to_vec() } else { inv_rho.to_vec() };
    let mut settings = vec![(Method::Vanilla, 1.0)];
    settings.extend(grid.iter().map(|&x| (Method::Dynamic, 1.0 / x)));
    let mut rows = Vec::with_capacity(settings.len());
    for (method, rho) in settings {
        let mut cfg = base.clone();
        cfg.schedule.method = method;
        cfg.schedule.rho_mu = rho;
        cfg.schedule.rho_c = rho;
        let plan = cfg.plan(train_d.len())?;
        let tc = train_config(&cfg, &train_d, StepSchedule::from_plan(&plan), plan.budget.delta)?;
        let h = train(&tc, &train_d, &test_d)?;
        check_history(&h)?;
        let s = summary(&h);
        info!("rho {rho}: accuracy {:.4}", s.final_test_accuracy);
        rows.push(SweepRow {
            rho_mu: plan.hyper.rho_mu,
            rho_c: plan.hyper.rho_c,
            final_test_accuracy: s.final_test_accuracy,
            late_phase_variance: s.late_phase_variance,
            final_cum_eps: s.final_cum_eps,
        });
    }
    write_sweep_csv(&rows, create(&base.out_dir(), "sweep.csv")?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Plan { overrides, compare_rho_mu } => cmd_plan(overrides, compare_rho_mu),
        Command::Train { overrides, non_private } => cmd_train(overrides, *non_private),
        Command::Fedtrain { overrides } => cmd_fedtrain(overrides),
        Command::Audit { plan, delta, out } => cmd_audit(plan, *delta, out.as_deref()),
        Command::Sweep { overrides, inv_rho } => cmd_sweep(overrides, inv_rho),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

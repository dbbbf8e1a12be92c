//! JSON experiment configuration and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dyndp::planner::{DpPlan, Method, ScheduleHyperparams};
use dyndp::{
    build_plan, gen_synthetic, load_idx, AdamConfig, Dataset, DenomMode, ModelKind, OptimizerKind,
    PrivacyBudget, Split,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub eps: f64,
    /// Defaults to 1/(10N) for a training set of N rows.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub method: Method,
    pub steps: usize,
    pub sampling_rate: f64,
    #[serde(default = "one")]
    pub rho_mu: f64,
    #[serde(default = "one")]
    pub rho_c: f64,
    pub c0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        n_train: usize,
        n_test: usize,
        dim: usize,
        separation: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training rows.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedSpec {
    pub num_clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub budget: BudgetSpec,
    pub schedule: ScheduleSpec,
    pub model: ModelKind,
    pub data: DataSpec,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub eta: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub denom: DenomMode,
    #[serde(default)]
    pub federated: Option<FederatedSpec>,
    #[serde(default)]
    pub track_theory: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

fn default_eval_every() -> usize {
    dyndp::train::DEFAULT_EVAL_EVERY
}

/// The configuration used when no file is given: the desk-scale synthetic
/// logistic-regression task. The seed still has to come from the command
/// line.
fn builtin(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        budget: BudgetSpec {
            eps: 0.5,
            delta: None,
        },
        schedule: ScheduleSpec {
            method: Method::Dynamic,
            steps: 1000,
            sampling_rate: 0.0625,
            rho_mu: 2.0,
            rho_c: 2.0,
            c0: 1.0,
        },
        model: ModelKind::LogisticRegression,
        data: DataSpec::Synthetic {
            n_train: 4000,
            n_test: 2000,
            dim: 20,
            separation: 4.0,
        },
        optimizer: OptimizerKind::Sgd,
        eta: 0.5,
        eval_every: default_eval_every(),
        denom: DenomMode::Expected,
        federated: None,
        track_theory: true,
        out: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OptimizerFlag {
    Sgd,
    Adam,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// vanilla, growmu, sensdecay or dynamic.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho_mu: Option<f64>,
    #[arg(long)]
    pub rho_c: Option<f64>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub sampling_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerFlag>,
    /// Output directory; falls back to the config, then DYNDP_OUT, then ./out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => match self.seed {
                Some(seed) => builtin(seed),
                None => bail!("a seed is required: pass --seed or a config file"),
            },
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.method {
            cfg.schedule.method = v;
        }
        if let Some(v) = self.eps {
            cfg.budget.eps = v;
        }
        if let Some(v) = self.delta {
            cfg.budget.delta = Some(v);
        }
        if let Some(v) = self.rho_mu {
            cfg.schedule.rho_mu = v;
        }
        if let Some(v) = self.rho_c {
            cfg.schedule.rho_c = v;
        }
        if let Some(v) = self.c0 {
            cfg.schedule.c0 = v;
        }
        if let Some(v) = self.steps {
            cfg.schedule.steps = v;
        }
        if let Some(v) = self.sampling_rate {
            cfg.schedule.sampling_rate = v;
        }
        match self.optimizer {
            Some(OptimizerFlag::Sgd) => cfg.optimizer = OptimizerKind::Sgd,
            Some(OptimizerFlag::Adam) if !matches!(cfg.optimizer, OptimizerKind::Adam(_)) => {
                cfg.optimizer = OptimizerKind::Adam(AdamConfig::default())
            }
            _ => {}
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if cfg.eta.is_nan() || cfg.eta <= 0.0 {
            bail!("eta must be > 0, got {}", cfg.eta);
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("DYNDP_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn hyper(&self) -> ScheduleHyperparams {
        let s = &self.schedule;
        let (rho_mu, rho_c) = s.method.rhos(s.rho_mu, s.rho_c);
        ScheduleHyperparams {
            steps: s.steps,
            sampling_rate: s.sampling_rate,
            rho_mu,
            rho_c,
            c0: s.c0,
        }
    }

    /// Plan for a run without data at hand. The training set is only read
    /// when δ has to default to 1/(10N).
    pub fn standalone_plan(&self) -> Result<DpPlan> {
        let n = match (&self.data, self.budget.delta) {
            (_, Some(_)) => 0,
            (DataSpec::Synthetic { n_train, .. }, None) => *n_train,
            (DataSpec::Idx { .. }, None) => self.load_data()?.0.len(),
        };
        self.plan(n)
    }

    pub fn budget(&self, n_train: usize) -> Result<PrivacyBudget> {
        let delta = self.budget.delta.unwrap_or(1.0 / (10.0 * n_train as f64));
        Ok(PrivacyBudget::new(self.budget.eps, delta)?)
    }

    pub fn plan(&self, n_train: usize) -> Result<DpPlan> {
        Ok(build_plan(self.budget(n_train)?, self.hyper())?)
    }

    /// (train, test). Synthetic test data uses `seed + 1` so it is disjoint
    /// from the training draw.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataSpec::Synthetic {
                n_train,
                n_test,
                dim,
                separation,
            } => {
                let train = gen_synthetic(*n_train, *dim, *separation, self.seed)?;
                let test = gen_synthetic(*n_test, *dim, *separation, self.seed.wrapping_add(1))?;
                Ok((train, test))
            }
            DataSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let mut train = load(train_images, train_labels, Split::Train)?;
                if let Some(n) = limit {
                    train.truncate(*n);
                }
                let test = load(test_images, test_labels, Split::Test)?;
                Ok((train, test))
            }
        }
    }
}

fn load(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    load_idx(images, labels, split)
        .with_context(|| format!("loading {} / {}", images.display(), labels.display()))
}

//! Centralised dynamic DP-SGD / DP-Adam training loop.
//!
//! Step t (1-based) uses RNG stream t: Poisson sampling first, then one
//! Gaussian vector for the noisy sum.

use serde::{Deserialize, Serialize};

use crate::accountant::{eps_consumption_curve, MAX_STEP_MU};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mech::{l2_norm, noisy_aggregate, poisson_sample, DenomMode, MechParams, StepOutcome};
use crate::model::{accuracy, full_gradient, per_sample_grads, Model};
use crate::optim::{ModelParams, Optimizer, OptimizerKind};
use crate::planner::{DpPlan, GeneralPlan};
use crate::rng::step_rng;

/// Clipping threshold used when the mechanism is switched off.
pub const DISABLED_CLIP: f64 = 1e12;
pub const DEFAULT_EVAL_EVERY: usize = 50;

/// Per-step clipping thresholds and noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub clip: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl StepSchedule {
    pub fn from_plan(plan: &DpPlan) -> Self {
        StepSchedule {
            clip: plan.c_t.clone(),
            sigma: plan.sigma_t.clone(),
        }
    }

    pub fn from_general(plan: &GeneralPlan) -> Self {
        StepSchedule {
            clip: plan.c_t.clone(),
            sigma: plan.sigma_t(),
        }
    }

    /// σ = 0 and C = 1e12 for `steps` steps.
    pub fn disabled(steps: usize) -> Self {
        StepSchedule {
            clip: vec![DISABLED_CLIP; steps],
            sigma: vec![0.0; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.clip.len()
    }

    /// Realised μ_t = C_t/σ_t (infinite when σ_t = 0).
    pub fn mu_t(&self) -> Vec<f64> {
        self.clip.iter().zip(&self.sigma).map(|(c, s)| c / s).collect()
    }

    /// Running ε at `delta`, or NaN when the schedule is not accountable.
    pub fn cumulative_eps(&self, p: f64, delta: Option<f64>) -> Vec<f64> {
        let mu = self.mu_t();
        let accountable = mu.iter().all(|m| m.is_finite() && *m > 0.0 && *m <= MAX_STEP_MU);
        match delta {
            Some(d) if accountable => eps_consumption_curve(&mu, p, d)
                .unwrap_or_else(|_| vec![f64::NAN; mu.len()]),
            _ => vec![f64::NAN; mu.len()],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.clip.is_empty() || self.clip.len() != self.sigma.len() {
            return Err(Error::Config(format!(
                "schedule needs equal, nonzero lengths (clip {}, sigma {})",
                self.clip.len(),
                self.sigma.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: Model,
    pub optimizer: OptimizerKind,
    pub eta: f64,
    pub schedule: StepSchedule,
    pub sampling_rate: f64,
    pub denom: DenomMode,
    pub seed: u64,
    pub eval_every: usize,
    /// δ used for the cumulative-ε column.
    pub delta: Option<f64>,
    /// Record full-batch gradient norms and secant curvature at eval steps.
    pub track_theory: bool,
}

impl TrainConfig {
    pub fn validate(&self, train: &Dataset) -> Result<()> {
        self.schedule.validate()?;
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sampling rate must lie in (0,1], got {}",
                self.sampling_rate
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.eta)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if train.dim() != self.model.input_dim || train.num_classes() > self.model.num_classes {
            return Err(Error::Config(
                "dataset shape does not match the model".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean loss over the sampled batch; `None` for an empty batch.
    pub loss: Option<f64>,
    /// Held-out accuracy, recorded on evaluation steps only.
    pub acc: Option<f64>,
    pub clip_fraction: f64,
    /// ‖g̃_t‖₂/√dim of the privatised update (root-mean-square coordinate).
    pub avg_coord_grad_norm: f64,
    pub c_t: f64,
    pub sigma_t: f64,
    pub mu_t: f64,
    pub cum_eps: f64,
    pub batch_size: usize,
    pub skipped: bool,
    pub full_grad_norm: Option<f64>,
    /// Secant curvature ‖Δ∇L‖/‖Δθ‖ between consecutive evaluation steps.
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub final_test_accuracy: f64,
    pub final_theta: Vec<f64>,
    pub aborted: Option<Abort>,
}

impl TrainHistory {
    pub fn realized_mu(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mu_t).collect()
    }
}

/// Tracks evaluation-step quantities shared by the centralised and federated
/// loops.
pub(crate) struct Recorder<'a> {
    pub model: &'a Model,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub eval_every: usize,
    pub steps: usize,
    pub track_theory: bool,
    last_eval: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> Recorder<'a> {
    pub fn new(
        model: &'a Model,
        train: &'a Dataset,
        test: &'a Dataset,
        eval_every: usize,
        steps: usize,
        track_theory: bool,
    ) -> Self {
        Recorder {
            model,
            train,
            test,
            eval_every,
            steps,
            track_theory,
            last_eval: None,
        }
    }

    /// Fills `acc`, `full_grad_norm` and `curvature` on evaluation steps.
    pub fn evaluate(&mut self, rec: &mut StepRecord, theta: &[f64]) -> Result<()> {
        if !rec.step.is_multiple_of(self.eval_every) && rec.step != self.steps {
            return Ok(());
        }
        rec.acc = Some(accuracy(self.model, theta, self.test));
        if self.track_theory {
            let (grad, _) = full_gradient(self.model, theta, self.train)?;
            rec.full_grad_norm = Some(l2_norm(&grad));
            if let Some((prev_theta, prev_grad)) = &self.last_eval {
                let dtheta: Vec<f64> = theta.iter().zip(prev_theta).map(|(a, b)| a - b).collect();
                let dgrad: Vec<f64> = grad.iter().zip(prev_grad).map(|(a, b)| a - b).collect();
                let step = l2_norm(&dtheta);
                if step > 0.0 {
                    rec.curvature = Some(l2_norm(&dgrad) / step);
                }
            }
            self.last_eval = Some((theta.to_vec(), grad));
        }
        Ok(())
    }
}

pub(crate) fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        l2_norm(v) / (v.len() as f64).sqrt()
    }
}

/// How a step turns per-sample gradients into an update.
enum Aggregation {
    Private,
    /// Plain minibatch gradient, no clipping and no noise.
    NonPrivate,
}

/// Runs dynamic DP training under `cfg.schedule`.
pub fn train(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainHistory> {
    run(cfg, train, test, Aggregation::Private)
}

/// The non-private baseline: identical sampling and optimiser, gradients
/// averaged without clipping or noise. Schedule values are only recorded.
pub fn train_non_private(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainHistory> {
    run(cfg, train, test, Aggregation::NonPrivate)
}

fn run(cfg: &TrainConfig, train: &Dataset, test: &Dataset, mode: Aggregation) -> Result<TrainHistory> {
    cfg.validate(train)?;
    let steps = cfg.schedule.steps();
    let model = &cfg.model;
    let dim = model.num_params();
    let mut params = ModelParams::new(model.init_params(cfg.seed));
    let mut opt = Optimizer::new(cfg.optimizer, dim)?;
    let cum_eps = cfg.schedule.cumulative_eps(cfg.sampling_rate, cfg.delta);
    let mut recorder = Recorder::new(model, train, test, cfg.eval_every, steps, cfg.track_theory);
    let mut records = Vec::with_capacity(steps);
    let mut aborted = None;

    for t in 1..=steps {
        let (c_t, sigma_t) = (cfg.schedule.clip[t - 1], cfg.schedule.sigma[t - 1]);
        let mut rng = step_rng(cfg.seed, t as u64);
        let idx = poisson_sample(train.len(), cfg.sampling_rate, &mut rng)?;
        let (batch, loss_sum) = per_sample_grads(model, &params.theta, train, &idx)?;
        let mut rec = StepRecord {
            step: t,
            loss: (!idx.is_empty()).then(|| loss_sum / idx.len() as f64),
            acc: None,
            clip_fraction: 0.0,
            avg_coord_grad_norm: 0.0,
            c_t,
            sigma_t,
            mu_t: c_t / sigma_t,
            cum_eps: cum_eps[t - 1],
            batch_size: idx.len(),
            skipped: false,
            full_grad_norm: None,
            curvature: None,
        };
        if let Some(l) = rec.loss {
            if !l.is_finite() {
                aborted = Some(Abort {
                    step: t,
                    reason: format!("non-finite loss {l}"),
                });
                records.push(rec);
                break;
            }
        }
        let update = match mode {
            Aggregation::Private => {
                let mech = MechParams {
                    clip: c_t,
                    sigma: sigma_t,
                    denom: cfg.denom,
                    sampling_rate: cfg.sampling_rate,
                    dataset_size: train.len(),
                };
                match noisy_aggregate(&batch, mech, &mut rng)? {
                    StepOutcome::Update(u) => {
                        rec.clip_fraction = u.clip_fraction;
                        Some(u.vector)
                    }
                    StepOutcome::Skipped => None,
                }
            }
            Aggregation::NonPrivate => {
                mean_gradient(&batch, cfg.denom, cfg.sampling_rate, train.len())
            }
        };
        match update {
            Some(g) => {
                rec.avg_coord_grad_norm = rms(&g);
                opt.step(&mut params, &g, cfg.eta)?;
            }
            None => rec.skipped = true,
        }
        if params.theta.iter().any(|x| !x.is_finite()) {
            aborted = Some(Abort {
                step: t,
                reason: "parameters became non-finite".into(),
            });
            records.push(rec);
            break;
        }
        recorder.evaluate(&mut rec, &params.theta)?;
        records.push(rec);
    }

    Ok(TrainHistory {
        records,
        final_test_accuracy: accuracy(model, &params.theta, test),
        final_theta: params.theta,
        aborted,
    })
}

fn mean_gradient(
    batch: &crate::mech::GradientBatch,
    denom: DenomMode,
    p: f64,
    n: usize,
) -> Option<Vec<f64>> {
    let d = match denom {
        DenomMode::Sampled if batch.is_empty() => return None,
        DenomMode::Sampled => batch.len() as f64,
        DenomMode::Expected => p * n as f64,
    };
    let mut sum = vec![0.0; batch.dim()];
    for row in batch.rows() {
        sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    sum.iter_mut().for_each(|s| *s /= d);
    Some(sum)
}

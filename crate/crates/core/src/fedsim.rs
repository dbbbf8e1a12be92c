//! Federated dynamic DP-SGD simulation.
//!
//! Round t (1-based) draws from RNG stream t: client sampling first, then one
//! Gaussian vector per selected client in ascending client id. Each selected
//! client clips its per-sample gradients with C_t, sums them, adds its own
//! N(0, σ_t² I) draw and divides by its shard size. The server averages the
//! received vectors over |S_t| and takes an SGD step.
//!
//! With a single client holding all data and p = 1 this is exactly the
//! centralised loop with `DenomMode::Sampled` and p = 1.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mech::{noisy_aggregate, poisson_sample, DenomMode, MechParams, StepOutcome};
use crate::model::{accuracy, per_sample_grads, Model};
use crate::optim::{sgd_step, ModelParams};
use crate::rng::{step_rng, StepRng};
use crate::train::{rms, Abort, Recorder, StepRecord, StepSchedule, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub model: Model,
    pub num_clients: usize,
    pub client_sampling_rate: f64,
    /// Client k owns rows `partition[k]` of the training set.
    pub partition: Vec<Range<usize>>,
    pub schedule: StepSchedule,
    pub eta: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub delta: Option<f64>,
    pub track_theory: bool,
}

/// Splits `n` rows into `clients` contiguous shards whose sizes differ by at
/// most one.
pub fn even_partition(n: usize, clients: usize) -> Vec<Range<usize>> {
    let base = n / clients.max(1);
    let extra = n % clients.max(1);
    let mut start = 0;
    (0..clients)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

impl FedConfig {
    pub fn validate(&self, train: &Dataset) -> Result<()> {
        if self.num_clients == 0 || self.partition.len() != self.num_clients {
            return Err(Error::Config(format!(
                "partition has {} shards for {} clients",
                self.partition.len(),
                self.num_clients
            )));
        }
        if !(self.client_sampling_rate > 0.0 && self.client_sampling_rate <= 1.0) {
            return Err(Error::Config(format!(
                "client sampling rate must lie in (0,1], got {}",
                self.client_sampling_rate
            )));
        }
        let mut sorted = self.partition.clone();
        sorted.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &sorted {
            if r.start != next || r.end <= r.start {
                return Err(Error::Config(
                    "partition must cover the dataset with disjoint nonempty shards".into(),
                ));
            }
            next = r.end;
        }
        if next != train.len() {
            return Err(Error::Config(format!(
                "partition covers {next} rows, dataset has {}",
                train.len()
            )));
        }
        if self.schedule.steps() == 0 || self.schedule.clip.len() != self.schedule.sigma.len() {
            return Err(Error::Config("invalid schedule".into()));
        }
        if !(self.eta > 0.0) || self.eval_every == 0 {
            return Err(Error::Config("eta must be > 0 and eval_every >= 1".into()));
        }
        Ok(())
    }
}

/// Poisson client selection for one round.
pub fn sample_clients(num_clients: usize, p: f64, rng: &mut StepRng) -> Result<Vec<usize>> {
    poisson_sample(num_clients, p, rng)
}

/// Mutable simulation state.
#[derive(Debug, Clone)]
pub struct FedState {
    pub params: ModelParams,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub selected: Vec<usize>,
    /// Server-side averaged update; `None` when no client was selected.
    pub update: Option<Vec<f64>>,
    pub loss: Option<f64>,
    pub clip_fraction: f64,
    pub rows: usize,
}

/// Runs round `t` (1-based), updating `state` in place.
pub fn fed_round(cfg: &FedConfig, train: &Dataset, state: &mut FedState, t: usize) -> Result<RoundOutcome> {
    if t == 0 || t > cfg.schedule.steps() {
        return Err(Error::Domain(format!("round {t} outside 1..={}", cfg.schedule.steps())));
    }
    let mut rng = step_rng(cfg.seed, t as u64);
    let selected = sample_clients(cfg.num_clients, cfg.client_sampling_rate, &mut rng)?;
    let mech = |n: usize| MechParams {
        clip: cfg.schedule.clip[t - 1],
        sigma: cfg.schedule.sigma[t - 1],
        denom: DenomMode::Sampled,
        sampling_rate: cfg.client_sampling_rate,
        dataset_size: n,
    };
    let mut sum: Option<Vec<f64>> = None;
    let mut loss_sum = 0.0;
    let mut rows = 0usize;
    let mut clipped = 0usize;
    let mut contributors = 0usize;
    for &k in &selected {
        let shard: Vec<usize> = cfg.partition[k].clone().collect();
        let (batch, l) = per_sample_grads(&cfg.model, &state.params.theta, train, &shard)?;
        let StepOutcome::Update(u) = noisy_aggregate(&batch, mech(shard.len()), &mut rng)? else {
            continue;
        };
        loss_sum += l;
        rows += shard.len();
        clipped += (u.clip_fraction * shard.len() as f64).round() as usize;
        contributors += 1;
        match sum.as_mut() {
            None => sum = Some(u.vector),
            Some(s) => s.iter_mut().zip(&u.vector).for_each(|(a, b)| *a += b),
        }
    }
    let update = sum.map(|mut s| {
        let n = contributors as f64;
        s.iter_mut().for_each(|v| *v /= n);
        s
    });
    if let Some(g) = &update {
        sgd_step(&mut state.params, g, cfg.eta)?;
    }
    Ok(RoundOutcome {
        selected,
        update,
        loss: (rows > 0).then(|| loss_sum / rows as f64),
        clip_fraction: if rows > 0 { clipped as f64 / rows as f64 } else { 0.0 },
        rows,
    })
}

/// Runs all rounds of the schedule and records the same history as the
/// centralised loop.
pub fn fed_train(cfg: &FedConfig, train: &Dataset, test: &Dataset) -> Result<TrainHistory> {
    cfg.validate(train)?;
    let steps = cfg.schedule.steps();
    let mut state = FedState {
        params: ModelParams::new(cfg.model.init_params(cfg.seed)),
    };
    let cum_eps = cfg.schedule.cumulative_eps(cfg.client_sampling_rate, cfg.delta);
    let mut recorder = Recorder::new(&cfg.model, train, test, cfg.eval_every, steps, cfg.track_theory);
    let mut records = Vec::with_capacity(steps);
    let mut aborted = None;
    for t in 1..=steps {
        let out = fed_round(cfg, train, &mut state, t)?;
        let (c_t, sigma_t) = (cfg.schedule.clip[t - 1], cfg.schedule.sigma[t - 1]);
        let mut rec = StepRecord {
            step: t,
            loss: out.loss,
            acc: None,
            clip_fraction: out.clip_fraction,
            avg_coord_grad_norm: out.update.as_deref().map(rms).unwrap_or(0.0),
            c_t,
            sigma_t,
            mu_t: c_t / sigma_t,
            cum_eps: cum_eps[t - 1],
            batch_size: out.rows,
            skipped: out.update.is_none(),
            full_grad_norm: None,
            curvature: None,
        };
        let bad_loss = rec.loss.is_some_and(|l| !l.is_finite());
        if bad_loss || state.params.theta.iter().any(|x| !x.is_finite()) {
            aborted = Some(Abort {
                step: t,
                reason: if bad_loss {
                    "non-finite loss".into()
                } else {
                    "parameters became non-finite".into()
                },
            });
            records.push(rec);
            break;
        }
        recorder.evaluate(&mut rec, &state.params.theta)?;
        records.push(rec);
    }
    Ok(TrainHistory {
        records,
        final_test_accuracy: accuracy(&cfg.model, &state.params.theta, test),
        final_theta: state.params.theta,
        aborted,
    })
}

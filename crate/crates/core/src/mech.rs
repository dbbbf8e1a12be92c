//! Per-step privatisation: Poisson subsampling, per-sample ℓ₂ clipping and
//! Gaussian noise on the clipped sum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{gaussian_vec, StepRng};

/// Per-sample gradients for one sampled minibatch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    dim: usize,
    rows: Vec<f64>,
    sample_ids: Vec<usize>,
}

impl GradientBatch {
    pub fn new(dim: usize) -> Self {
        GradientBatch {
            dim,
            rows: Vec::new(),
            sample_ids: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>, sample_ids: Vec<usize>) -> Result<Self> {
        if rows.len() != sample_ids.len() {
            return Err(Error::DimMismatch {
                expected: rows.len(),
                got: sample_ids.len(),
            });
        }
        let mut batch = GradientBatch::new(dim);
        for (row, id) in rows.into_iter().zip(sample_ids) {
            batch.push(&row, id)?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, row: &[f64], sample_id: usize) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(domain(format!("gradient for sample {sample_id} is not finite")));
        }
        self.rows.extend_from_slice(row);
        self.sample_ids.push(sample_id);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim.max(1))
    }
}

/// Divisor applied to the noisy clipped sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenomMode {
    /// Realised batch size |X_t|.
    Sampled,
    /// Expected batch size p·N.
    #[default]
    Expected,
}

/// The privatised gradient for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyUpdate {
    pub vector: Vec<f64>,
    /// Fraction of rows whose norm exceeded the threshold.
    pub clip_fraction: f64,
    pub batch_size: usize,
}

/// Outcome of [`noisy_aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Update(NoisyUpdate),
    /// Empty batch under [`DenomMode::Sampled`]; nothing is released.
    Skipped,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// g · min(1, C/‖g‖).
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

/// Scales `g` in place to norm at most `c`; returns whether it was scaled.
pub fn clip_in_place(g: &mut [f64], c: f64) -> bool {
    let norm = l2_norm(g);
    if norm > c {
        let scale = c / norm;
        g.iter_mut().for_each(|x| *x *= scale);
        true
    } else {
        false
    }
}

/// Independent Bernoulli(p) inclusion of each of `n` indices.
pub fn poisson_sample(n: usize, p: f64, rng: &mut StepRng) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("sampling rate must lie in (0,1], got {p}")));
    }
    if p == 1.0 {
        return Ok((0..n).collect());
    }
    Ok((0..n).filter(|_| rng.random_bool(p)).collect())
}

/// Noise and normalisation settings for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechParams {
    pub clip: f64,
    pub sigma: f64,
    pub denom: DenomMode,
    pub sampling_rate: f64,
    pub dataset_size: usize,
}

impl MechParams {
    fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(domain(format!("clipping threshold must be > 0, got {}", self.clip)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(domain(format!("noise std must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Clips every row, sums in row order, adds N(0, σ² I) once to the sum and
/// divides by the chosen denominator.
///
/// With σ = 0 no noise is drawn. `rng` must be positioned after any sampling
/// draws for the step.
pub fn noisy_aggregate(
    batch: &GradientBatch,
    params: MechParams,
    rng: &mut StepRng,
) -> Result<StepOutcome> {
    params.validate()?;
    let denom = match params.denom {
        DenomMode::Sampled if batch.is_empty() => return Ok(StepOutcome::Skipped),
        DenomMode::Sampled => batch.len() as f64,
        DenomMode::Expected => params.sampling_rate * params.dataset_size as f64,
    };
    if !(denom > 0.0) {
        return Err(domain("expected batch size p*N must be > 0"));
    }
    let dim = batch.dim();
    let mut sum = vec![0.0; dim];
    let mut clipped = 0usize;
    let mut row = vec![0.0; dim];
    for r in batch.rows() {
        row.copy_from_slice(r);
        if clip_in_place(&mut row, params.clip) {
            clipped += 1;
        }
        sum.iter_mut().zip(&row).for_each(|(s, x)| *s += x);
    }
    if params.sigma > 0.0 {
        let noise = gaussian_vec(rng, dim);
        sum.iter_mut()
            .zip(noise)
            .for_each(|(s, z)| *s += params.sigma * z);
    }
    sum.iter_mut().for_each(|s| *s /= denom);
    let clip_fraction = if batch.is_empty() {
        0.0
    } else {
        clipped as f64 / batch.len() as f64
    };
    Ok(StepOutcome::Update(NoisyUpdate {
        vector: sum,
        clip_fraction,
        batch_size: batch.len(),
    }))
}

//! Posterior recovery from a trained critic.
//!
//! The critic approximates a log density ratio, so
//! `p(θ | y*) ∝ clip(e^{T(θ, y*) − 1}, e^{−τ}, e^{τ}) · p(θ)`. The density is
//! unnormalized and only used inside self-normalizing samplers.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{sample_prior, ImplicitModel};
use crate::nn::Critic;
use crate::rng::{derive_seed, rng_from_seed};

/// Size of the prior pool the MH chain picks its starting point from.
const INIT_POOL: usize = 1_000;

pub struct PosteriorModel<'a> {
    pub critic: &'a Critic,
    pub y_star: Vec<f64>,
    pub tau: f64,
    pub model: &'a dyn ImplicitModel,
}

impl<'a> PosteriorModel<'a> {
    pub fn new(critic: &'a Critic, y_star: Vec<f64>, tau: f64, model: &'a dyn ImplicitModel) -> Result<Self> {
        let expected = model.theta_dim() + model.outcome_dim();
        if critic.mlp.input_dim() != expected || y_star.len() != model.outcome_dim() {
            return Err(Error::Shape(format!(
                "critic takes {} inputs and y* has {} entries; {} expects {} and {}",
                critic.mlp.input_dim(),
                y_star.len(),
                model.name(),
                expected,
                model.outcome_dim()
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::Argument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            critic,
            y_star,
            tau,
            model,
        })
    }

    fn inputs(&self, thetas: &Array2<f64>) -> Array2<f64> {
        let (n, dt) = thetas.dim();
        let dy = self.y_star.len();
        Array2::from_shape_fn((n, dt + dy), |(i, j)| {
            if j < dt {
                thetas[[i, j]]
            } else {
                self.y_star[j - dt]
            }
        })
    }

    /// `clamp(T − 1, −τ, τ)` for every row of `thetas`.
    pub fn log_weights(&self, thetas: &Array2<f64>) -> Result<Vec<f64>> {
        let scores = self.critic.score(self.inputs(thetas).view())?;
        Ok(scores.iter().map(|t| (t - 1.0).clamp(-self.tau, self.tau)).collect())
    }

    pub fn log_weight(&self, theta: &[f64]) -> Result<f64> {
        let row = Array2::from_shape_vec((1, theta.len()), theta.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.log_weights(&row)?[0])
    }
}

/// Unnormalized log posterior; `-inf` outside the prior support.
pub fn posterior_logdensity(pm: &PosteriorModel<'_>, theta: &[f64]) -> Result<f64> {
    if theta.len() != pm.model.theta_dim() {
        return Err(Error::Shape(format!(
            "expected {} parameters, got {}",
            pm.model.theta_dim(),
            theta.len()
        )));
    }
    let prior = pm.model.prior_log_density(theta);
    if prior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(pm.log_weight(theta)? + prior)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhSettings {
    pub chain_len: usize,
    pub burn_in: usize,
    /// Per-coordinate proposal standard deviation in the sampling space; when
    /// absent, 10% of the prior standard deviation.
    pub proposal_scale: Option<Vec<f64>>,
}

impl Default for MhSettings {
    fn default() -> Self {
        Self {
            chain_len: 50_000,
            burn_in: 10_000,
            proposal_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Post-burn-in draws, one per row.
    pub samples: Array2<f64>,
    pub acceptance_rate: f64,
}

/// Random-walk Metropolis on an arbitrary log density.
pub fn metropolis<F>(log_density: F, init: &[f64], chain_len: usize, burn_in: usize, scale: &[f64], seed: u64) -> Result<Chain>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if chain_len <= burn_in {
        return Err(Error::Argument(format!(
            "chain length {chain_len} must exceed burn-in {burn_in}"
        )));
    }
    if scale.len() != init.len() || scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Argument("proposal scales must be positive, one per coordinate".into()));
    }
    let mut current = init.to_vec();
    let mut current_lp = log_density(&current)?;
    if !current_lp.is_finite() {
        return Err(Error::Argument(format!("chain starts at a point with log density {current_lp}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut samples = Array2::zeros((chain_len - burn_in, init.len()));
    let mut proposal = vec![0.0; init.len()];
    let mut accepted = 0usize;
    for step in 0..chain_len {
        for ((p, c), s) in proposal.iter_mut().zip(&current).zip(scale) {
            let z: f64 = rng.sample(StandardNormal);
            *p = c + s * z;
        }
        let u: f64 = rng.random();
        let lp = log_density(&proposal)?;
        if lp.is_finite() && u.ln() < lp - current_lp {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        if step >= burn_in {
            samples
                .row_mut(step - burn_in)
                .iter_mut()
                .zip(&current)
                .for_each(|(s, c)| *s = *c);
        }
    }
    if accepted == 0 {
        return Err(Error::Diagnostics(format!(
            "no proposal accepted in {chain_len} steps; shrink the proposal scale"
        )));
    }
    Ok(Chain {
        samples,
        acceptance_rate: accepted as f64 / chain_len as f64,
    })
}

/// MH on the critic posterior, proposing in the model's sampling space and
/// starting from the highest-density member of a prior pool.
pub fn mh_sample(pm: &PosteriorModel<'_>, settings: &MhSettings, seed: u64) -> Result<Chain> {
    let model = pm.model;
    let scale = match &settings.proposal_scale {
        Some(s) => s.clone(),
        None => model.prior_sampling_std().iter().map(|s| 0.1 * s).collect(),
    };
    let pool = sample_prior(model, INIT_POOL, derive_seed(seed, &[0]))?;
    let weights = pm.log_weights(&pool)?;
    let mut best = 0;
    let mut best_lp = f64::NEG_INFINITY;
    for (i, w) in weights.iter().enumerate() {
        let lp = w + model.prior_log_density(pool.row(i).as_slice().expect("standard layout"));
        if lp > best_lp {
            best_lp = lp;
            best = i;
        }
    }
    let init = model.to_sampling_space(pool.row(best).as_slice().expect("standard layout"));
    let target = |phi: &[f64]| -> Result<f64> {
        let theta = model.from_sampling_space(phi);
        let lp = posterior_logdensity(pm, &theta)?;
        Ok(if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp + model.sampling_log_jacobian(phi)
        })
    };
    let mut chain = metropolis(target, &init, settings.chain_len, settings.burn_in, &scale, derive_seed(seed, &[1]))?;
    for mut row in chain.samples.rows_mut() {
        let theta = model.from_sampling_space(row.as_slice().expect("standard layout"));
        row.iter_mut().zip(theta).for_each(|(r, t)| *r = t);
    }
    Ok(chain)
}

/// Self-normalized importance resampling of `pool` with weights
/// `clip(e^{T − 1}, e^{−τ}, e^{τ})`.
pub fn categorical_sample(pm: &PosteriorModel<'_>, pool: &Array2<f64>, m: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let log_w = pm.log_weights(pool)?;
    resample(pool, &log_w, m, seed)
}

/// Draws `m` rows of `pool` with replacement, proportional to `exp(log_w)`.
pub fn resample(pool: &Array2<f64>, log_w: &[f64], m: usize, seed: u64) -> Result<Array2<f64>> {
    if pool.nrows() != log_w.len() || pool.nrows() == 0 {
        return Err(Error::Shape(format!("{} pool rows, {} weights", pool.nrows(), log_w.len())));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(format!("resampling weights: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut out = Array2::zeros((m, pool.ncols()));
    for mut row in out.rows_mut() {
        row.assign(&pool.row(dist.sample(&mut rng)));
    }
    Ok(out)
}

/// Kish effective sample size `(Σw)² / Σw²` of importance weights `exp(log_w)`.
pub fn kish_ess(log_w: &[f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    sum * sum / w.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
    pub sampler: String,
}

/// Per-coordinate mean and sample standard deviation (`n − 1` denominator).
pub fn summarize(samples: &Array2<f64>, sampler: &str) -> Result<PosteriorSummary> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("summary needs at least 2 samples, got {n}")));
    }
    let mut mean = Vec::with_capacity(samples.ncols());
    let mut std = Vec::with_capacity(samples.ncols());
    for col in samples.columns() {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(PosteriorSummary {
        mean,
        std,
        count: n,
        sampler: sampler.to_string(),
    })
}

/// Integrated autocorrelation time, summing autocorrelations until the first
/// non-positive pair sum.
pub fn autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / c0;
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau
}

/// Keeps every `step`-th row.
pub fn thin(samples: &Array2<f64>, step: usize) -> Array2<f64> {
    let step = step.max(1);
    let rows: Vec<usize> = (0..samples.nrows()).step_by(step).collect();
    samples.select(ndarray::Axis(0), &rows)
}

/// Two-sample χ² homogeneity test on three bins cut at the pooled tertiles.
/// Returns the p-value; with two degrees of freedom the χ² tail is `e^{−x/2}`.
pub fn three_bin_agreement(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Argument("each sample needs at least 3 values".into()));
    }
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let cut1 = pooled[pooled.len() / 3];
    let cut2 = pooled[2 * pooled.len() / 3];
    let counts = |xs: &[f64]| {
        let mut c = [0.0f64; 3];
        for &x in xs {
            c[if x < cut1 { 0 } else if x < cut2 { 1 } else { 2 }] += 1.0;
        }
        c
    };
    let (ca, cb) = (counts(a), counts(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total = na + nb;
    let mut stat = 0.0;
    for k in 0..3 {
        let col = ca[k] + cb[k];
        if col == 0.0 {
            continue;
        }
        for (obs, n) in [(ca[k], na), (cb[k], nb)] {
            let expected = n * col / total;
            stat += (obs - expected).powi(2) / expected;
        }
    }
    Ok((-stat / 2.0).exp())
}

//! Variational mutual-information lower bounds and a nested Monte Carlo reference.
//!
//! Both bounds take critic scores on joint pairs `(θ_i, y_i)` and on
//! product-of-marginals pairs `(θ_i, y_{π(i)})` where `π` is a derangement of
//! the batch:
//!
//! - MINE: `mean(T_joint) − log mean(exp(T_marg))`
//! - SMILE: `mean(T_joint) − log mean(clip(exp(T_marg), e^{−τ}, e^{τ}))`

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{sample_prior, ImplicitModel};
use crate::nn::{Critic, ParamGrads};
use crate::rng::{derive_seed, rng_from_seed};

/// Default SMILE clip level.
pub const DEFAULT_TAU: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmileConfig {
    pub tau: f64,
}

impl SmileConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Argument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }
}

impl Default for SmileConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

/// `max(min(u, w), v)`.
pub fn clip(u: f64, v: f64, w: f64) -> Result<f64> {
    if v > w {
        return Err(Error::Argument(format!("clip lower bound {v} exceeds upper bound {w}")));
    }
    Ok(u.min(w).max(v))
}

/// `log(mean(exp(values)))` with max-shift stabilization.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_scores(joint: &[f64], marg: &[f64]) -> Result<()> {
    if joint.is_empty() || marg.is_empty() {
        return Err(Error::Argument("score batches must be non-empty".into()));
    }
    Ok(())
}

pub fn mine_lower_bound(joint_scores: &[f64], marg_scores: &[f64]) -> Result<f64> {
    check_scores(joint_scores, marg_scores)?;
    Ok(mean(joint_scores) - log_mean_exp(marg_scores))
}

/// Clipped partition term: `log mean(clip(exp(s), e^{−τ}, e^{τ}))`, always in `[−τ, τ]`.
///
/// Clipping in log space is exact because `exp` is monotone, and with
/// `τ = ∞` the scores pass through untouched.
pub fn smile_partition_term(marg_scores: &[f64], tau: f64) -> f64 {
    if tau == f64::INFINITY {
        return log_mean_exp(marg_scores);
    }
    let clipped: Vec<f64> = marg_scores.iter().map(|s| s.clamp(-tau, tau)).collect();
    log_mean_exp(&clipped).clamp(-tau, tau)
}

pub fn smile_lower_bound(joint_scores: &[f64], marg_scores: &[f64], tau: f64) -> Result<f64> {
    check_scores(joint_scores, marg_scores)?;
    SmileConfig::new(tau)?;
    Ok(mean(joint_scores) - smile_partition_term(marg_scores, tau))
}

/// Uniform random derangement of `0..n`, by rejection over uniform shuffles.
pub fn marginal_pairing(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Argument(format!("pairing needs at least 2 samples, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Joint samples and the derangement used for the marginal term.
#[derive(Debug, Clone, PartialEq)]
pub struct MiBatch {
    thetas: Array2<f64>,
    ys: Array2<f64>,
    perm: Vec<usize>,
}

impl MiBatch {
    pub fn new(thetas: Array2<f64>, ys: Array2<f64>, perm: Vec<usize>) -> Result<Self> {
        let n = thetas.nrows();
        if ys.nrows() != n || perm.len() != n {
            return Err(Error::Shape(format!(
                "{n} thetas, {} outcomes, {} pairing entries",
                ys.nrows(),
                perm.len()
            )));
        }
        if n < 2 {
            return Err(Error::Argument("MI batches need at least 2 samples".into()));
        }
        let mut seen = vec![false; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || seen[p] || p == i {
                return Err(Error::Argument("pairing must be a derangement".into()));
            }
            seen[p] = true;
        }
        Ok(Self { thetas, ys, perm })
    }

    pub fn len(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn thetas(&self) -> &Array2<f64> {
        &self.thetas
    }

    pub fn ys(&self) -> &Array2<f64> {
        &self.ys
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Replaces the outcomes, keeping thetas and pairing.
    pub fn with_ys(&self, ys: Array2<f64>) -> Result<Self> {
        if ys.dim() != self.ys.dim() {
            return Err(Error::Shape("replacement outcomes change the batch shape".into()));
        }
        Ok(Self {
            thetas: self.thetas.clone(),
            ys,
            perm: self.perm.clone(),
        })
    }

    /// Critic inputs: `n` joint rows `[θ_i, y_i]` followed by `n` marginal
    /// rows `[θ_i, y_{π(i)}]`.
    pub fn critic_inputs(&self) -> Array2<f64> {
        pair_inputs(self.thetas.view(), self.ys.view(), &self.perm)
    }
}

pub fn pair_inputs(thetas: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>, perm: &[usize]) -> Array2<f64> {
    let (n, dt) = thetas.dim();
    let dy = ys.ncols();
    let mut x = Array2::zeros((2 * n, dt + dy));
    x.slice_mut(s![..n, ..dt]).assign(&thetas);
    x.slice_mut(s![..n, dt..]).assign(&ys);
    x.slice_mut(s![n.., ..dt]).assign(&thetas);
    for (i, &p) in perm.iter().enumerate() {
        x.slice_mut(s![n + i, dt..]).assign(&ys.row(p));
    }
    x
}

/// Evaluates SMILE for `batch` under a fixed critic.
pub fn smile_value(critic: &Critic, batch: &MiBatch, tau: f64) -> Result<f64> {
    let scores = critic.score(batch.critic_inputs().view())?;
    let n = batch.len();
    smile_lower_bound(
        scores.slice(s![..n]).as_slice().expect("contiguous"),
        scores.slice(s![n..]).as_slice().expect("contiguous"),
        tau,
    )
}

/// `d SMILE / d score` for every critic input row (joint rows first).
///
/// Marginal scores outside `(−τ, τ)` sit on a flat part of the clip and get a
/// zero derivative.
pub fn smile_score_grads(joint: &[f64], marg: &[f64], tau: f64) -> Vec<f64> {
    let n_joint = joint.len() as f64;
    let clamped: Vec<f64> = marg.iter().map(|s| s.clamp(-tau, tau)).collect();
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = clamped.iter().map(|c| (c - max).exp()).sum();
    let mut grads = vec![1.0 / n_joint; joint.len()];
    grads.extend(marg.iter().zip(&clamped).map(|(&s, &c)| {
        if s > -tau && s < tau {
            -(c - max).exp() / denom
        } else {
            0.0
        }
    }));
    grads
}

/// SMILE value together with its exact gradients.
#[derive(Debug, Clone)]
pub struct SmileGradients {
    pub value: f64,
    pub params: ParamGrads,
    /// Gradient with respect to the raw critic inputs, rows as in
    /// [`MiBatch::critic_inputs`].
    pub inputs: Array2<f64>,
}

pub fn smile_backward(critic: &Critic, batch: &MiBatch, tau: f64) -> Result<SmileGradients> {
    SmileConfig::new(tau)?;
    let x = critic.prepare(batch.critic_inputs().view())?;
    let (scores, cache) = critic.mlp.forward(x.view())?;
    let n = batch.len();
    let scores = scores.as_slice().expect("contiguous");
    let (joint, marg) = scores.split_at(n);
    let value = smile_lower_bound(joint, marg, tau)?;
    let out_grads = smile_score_grads(joint, marg, tau);
    let (params, input_grads) = critic.mlp.backward(&cache, &out_grads)?;
    Ok(SmileGradients {
        value,
        params,
        inputs: critic.raw_input_grads(input_grads),
    })
}

/// Jensen-Shannon f-GAN bound `mean(−softplus(−T_joint)) − mean(softplus(T_marg))`.
///
/// Its maximizer is the log density ratio itself, so it is a stable training
/// signal for a critic whose SMILE value is reported.
pub fn js_lower_bound(joint_scores: &[f64], marg_scores: &[f64]) -> Result<f64> {
    check_scores(joint_scores, marg_scores)?;
    let first = joint_scores.iter().map(|t| -softplus(-t)).sum::<f64>() / joint_scores.len() as f64;
    let second = marg_scores.iter().map(|t| softplus(*t)).sum::<f64>() / marg_scores.len() as f64;
    Ok(first - second)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `d JS / d score`, joint rows first.
pub fn js_score_grads(joint: &[f64], marg: &[f64]) -> Vec<f64> {
    let (nj, nm) = (joint.len() as f64, marg.len() as f64);
    joint
        .iter()
        .map(|t| sigmoid(-t) / nj)
        .chain(marg.iter().map(|t| -sigmoid(*t) / nm))
        .collect()
}

/// Objective whose gradient trains the critic. The reported value is always SMILE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CriticLoss {
    /// Exact SMILE gradient.
    Smile,
    /// Jensen-Shannon gradient.
    #[default]
    Js,
}

/// SMILE value and input gradients, with parameter gradients taken from `loss`.
pub fn critic_backward(critic: &Critic, batch: &MiBatch, tau: f64, loss: CriticLoss) -> Result<SmileGradients> {
    let mut grads = smile_backward(critic, batch, tau)?;
    if loss == CriticLoss::Js {
        let x = critic.prepare(batch.critic_inputs().view())?;
        let (scores, cache) = critic.mlp.forward(x.view())?;
        let scores = scores.as_slice().expect("contiguous");
        let (joint, marg) = scores.split_at(batch.len());
        grads.params = critic.mlp.backward(&cache, &js_score_grads(joint, marg))?.0;
    }
    Ok(grads)
}

/// Gradient of SMILE with respect to the critic parameters.
pub fn smile_grad_psi(critic: &Critic, batch: &MiBatch, tau: f64) -> Result<ParamGrads> {
    smile_backward(critic, batch, tau).map(|g| g.params)
}

/// Nested Monte Carlo estimate with its standard error over outer samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmcEstimate {
    pub value: f64,
    pub std_err: f64,
    pub outer: usize,
    pub inner: usize,
}

/// One outer term `log p(y|θ_0) − log mean_j p(y|θ_j)`.
pub fn nmc_term(
    model: &dyn ImplicitModel,
    design: &[f64],
    theta0: &[f64],
    y: &[f64],
    inner_thetas: ArrayView2<'_, f64>,
) -> Result<f64> {
    let numer = model.log_likelihood(y, theta0, design)?;
    let inner: Vec<f64> = inner_thetas
        .rows()
        .into_iter()
        .map(|t| model.log_likelihood(y, t.as_slice().expect("contiguous"), design))
        .collect::<Result<_>>()?;
    Ok(numer - log_mean_exp(&inner))
}

/// `1/N Σ_i log[p(y_i|θ_{i,0}) / (1/M Σ_j p(y_i|θ_{i,j}))]` with fresh inner
/// prior draws for every outer sample.
pub fn nmc_estimate(
    model: &dyn ImplicitModel,
    design: &[f64],
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<NmcEstimate> {
    if outer == 0 || inner == 0 {
        return Err(Error::Argument("NMC sample counts must be at least 1".into()));
    }
    model.domain().check(design)?;
    // Fail fast on models without a likelihood.
    let probe = sample_prior(model, 1, seed)?;
    let probe_row = probe.row(0).to_vec();
    model.log_likelihood(&vec![0.0; model.outcome_dim()], &probe_row, design)?;

    let thetas = sample_prior(model, outer, derive_seed(seed, &[0]))?;
    let terms: Vec<f64> = (0..outer)
        .into_par_iter()
        .map(|i| {
            let theta0 = thetas.row(i).to_vec();
            let y = model.simulate(&theta0, design, derive_seed(seed, &[1, i as u64]))?;
            let inner_thetas = sample_prior(model, inner, derive_seed(seed, &[2, i as u64]))?;
            nmc_term(model, design, &theta0, &y, inner_thetas.view())
        })
        .collect::<Result<_>>()?;
    Ok(summarize_terms(&terms, inner))
}

fn summarize_terms(terms: &[f64], inner: usize) -> NmcEstimate {
    let n = terms.len() as f64;
    let value = terms.iter().sum::<f64>() / n;
    let var = if terms.len() > 1 {
        terms.iter().map(|t| (t - value).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    NmcEstimate {
        value,
        std_err: (var / n).sqrt(),
        outer: terms.len(),
        inner,
    }
}

/// NMC from explicit samples: row `i` of `outer_thetas`/`outer_ys` is paired
/// with `inner_thetas[i]`.
pub fn nmc_from_samples(
    model: &dyn ImplicitModel,
    design: &[f64],
    outer_thetas: ArrayView2<'_, f64>,
    outer_ys: ArrayView2<'_, f64>,
    inner_thetas: &[Array2<f64>],
) -> Result<NmcEstimate> {
    if outer_thetas.nrows() != outer_ys.nrows() || outer_ys.nrows() != inner_thetas.len() {
        return Err(Error::Shape("outer and inner sample counts disagree".into()));
    }
    if inner_thetas.is_empty() {
        return Err(Error::Argument("NMC needs at least one outer sample".into()));
    }
    let terms: Vec<f64> = (0..inner_thetas.len())
        .map(|i| {
            nmc_term(
                model,
                design,
                outer_thetas.row(i).as_slice().expect("contiguous"),
                outer_ys.row(i).as_slice().expect("contiguous"),
                inner_thetas[i].view(),
            )
        })
        .collect::<Result<_>>()?;
    Ok(summarize_terms(&terms, inner_thetas[0].nrows()))
}

/// Seeded helper drawing a fresh MI batch at `design` (used by tests and tools).
pub fn draw_batch(
    model: &dyn ImplicitModel,
    design: &[f64],
    n: usize,
    seed: u64,
) -> Result<MiBatch> {
    let thetas = sample_prior(model, n, derive_seed(seed, &[crate::rng::STREAM_PRIOR]))?;
    let sim = crate::models::simulate_batch(
        model,
        thetas,
        design,
        derive_seed(seed, &[crate::rng::STREAM_NOISE]),
    )?;
    let perm = marginal_pairing(n, derive_seed(seed, &[crate::rng::STREAM_PAIRING]))?;
    MiBatch::new(sim.thetas, sim.ys, perm)
}

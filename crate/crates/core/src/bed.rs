//! The joint design/critic ascent and its pathwise-gradient baseline.
//!
//! Every epoch draws a fresh prior batch and noise, scores the SMILE bound at
//! the current design, estimates the design gradient with the critic frozen,
//! then takes a projected ascent step on the design and an Adam step on the
//! critic.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::es::{ges_gradient, EsConfig, GesState};
use crate::mi::{
    critic_backward, marginal_pairing, smile_backward, smile_value, CriticLoss, MiBatch, SmileConfig, DEFAULT_TAU,
};
use crate::models::{outcomes, sample_noise, sample_prior, DesignVector, Domain, ImplicitModel};
use crate::nn::{adam_step, AdamState, Critic, InputScaler, Mlp};
use crate::rng::{
    derive_seed, rng_from_seed, STREAM_ES, STREAM_INIT_CRITIC, STREAM_INIT_DESIGN, STREAM_NOISE,
    STREAM_PAIRING, STREAM_PRIOR,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BedConfig {
    pub epochs: usize,
    pub samples: usize,
    pub lr_psi: f64,
    pub lr_xi: f64,
    pub tau: f64,
    /// Objective the critic ascends; SMILE is reported either way.
    pub critic_loss: CriticLoss,
    /// Adam steps taken on each epoch's batch; the first uses the gradient
    /// evaluated alongside the design gradient.
    pub critic_steps: usize,
    pub es: EsConfig,
    /// Hidden layer widths; input and output sizes follow from the model.
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Starting design; drawn uniformly from the domain when absent.
    pub init_design: Option<Vec<f64>>,
}

impl BedConfig {
    /// Paper defaults for a design of dimension `design_dim`.
    pub fn defaults(design_dim: usize) -> Self {
        Self {
            epochs: 500,
            samples: 10_000,
            lr_psi: 1e-4,
            lr_xi: 1e-2,
            tau: DEFAULT_TAU,
            critic_loss: CriticLoss::default(),
            critic_steps: 1,
            es: EsConfig::defaults_for(design_dim),
            hidden: vec![100],
            seed: 0,
            init_design: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.samples < 2 {
            return Err(Error::Config(format!("samples must be at least 2, got {}", self.samples)));
        }
        if !(self.lr_psi > 0.0) || !self.lr_psi.is_finite() {
            return Err(Error::Config(format!("lr_psi must be positive, got {}", self.lr_psi)));
        }
        // A zero design rate is allowed: it turns the loop into plain MI
        // estimation at a fixed design.
        if !(self.lr_xi >= 0.0) || !self.lr_xi.is_finite() {
            return Err(Error::Config(format!("lr_xi must be non-negative, got {}", self.lr_xi)));
        }
        SmileConfig::new(self.tau).map_err(|_| Error::Config(format!("tau must be positive, got {}", self.tau)))?;
        self.es.validate()?;
        if self.critic_steps == 0 {
            return Err(Error::Config("critic_steps must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// SMILE at the design and critic the epoch started from.
    pub smile: f64,
    pub design: Vec<f64>,
    pub grad_norm_xi: f64,
    pub grad_norm_psi: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BedTrace {
    pub records: Vec<EpochRecord>,
}

impl BedTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn smile_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.smile).collect()
    }

    /// Mean SMILE over the last `k` epochs (or all of them if fewer).
    pub fn tail_mean(&self, k: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(k)..];
        tail.iter().map(|r| r.smile).sum::<f64>() / tail.len() as f64
    }

    /// CSV with columns `epoch,smile,xi_0..,grad_norm_xi,grad_norm_psi`.
    /// Wall-clock times are left out so equal seeds give equal bytes.
    pub fn to_csv(&self) -> String {
        let dim = self.records.first().map_or(0, |r| r.design.len());
        let mut out = String::from("epoch,smile");
        for j in 0..dim {
            let _ = write!(out, ",xi_{j}");
        }
        out.push_str(",grad_norm_xi,grad_norm_psi\n");
        for r in &self.records {
            let _ = write!(out, "{},{:?}", r.epoch, r.smile);
            for v in &r.design {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(out, ",{:?},{:?}", r.grad_norm_xi, r.grad_norm_psi);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BedOutcome {
    pub design: DesignVector,
    pub critic: Critic,
    pub trace: BedTrace,
}

/// Per-coordinate clamp into the design box.
pub fn project_design(xi: &DesignVector) -> DesignVector {
    DesignVector::projected(xi.values(), xi.domain().clone())
}

#[derive(Clone, Copy)]
enum DesignGradient {
    Ges,
    Pathwise,
}

/// Simultaneous ascent: guided-ES design gradients, exact critic gradients.
pub fn run_saga_bed(model: &dyn ImplicitModel, config: &BedConfig) -> Result<BedOutcome> {
    run_loop(model, config, DesignGradient::Ges)
}

/// Same loop with the exact chain-rule design gradient through the simulator.
pub fn run_pathwise_baseline(model: &dyn ImplicitModel, config: &BedConfig) -> Result<BedOutcome> {
    // Probe before doing any work so unsupported models fail immediately.
    let probe_theta = sample_prior(model, 1, config.seed)?;
    let noise = vec![0.0; model.noise_dim()];
    let mut out = vec![0.0; model.outcome_dim()];
    let design = model.domain().lo.clone();
    model.outcome_design_derivative(probe_theta.row(0).as_slice().expect("standard layout"), &design, &noise, &mut out)?;
    run_loop(model, config, DesignGradient::Pathwise)
}

/// Fresh per-epoch simulation state, reused by every perturbed design.
struct EpochData {
    thetas: Array2<f64>,
    noise: Array2<f64>,
    batch: MiBatch,
}

fn draw_epoch(model: &dyn ImplicitModel, design: &[f64], n: usize, seed: u64, epoch: u64) -> Result<EpochData> {
    let thetas = sample_prior(model, n, derive_seed(seed, &[epoch, STREAM_PRIOR]))?;
    let noise = sample_noise(model, n, derive_seed(seed, &[epoch, STREAM_NOISE]));
    let ys = outcomes(model, thetas.view(), noise.view(), design);
    let perm = marginal_pairing(n, derive_seed(seed, &[epoch, STREAM_PAIRING]))?;
    let batch = MiBatch::new(thetas.clone(), ys, perm)?;
    Ok(EpochData { thetas, noise, batch })
}

fn initial_design(model: &dyn ImplicitModel, config: &BedConfig) -> Result<DesignVector> {
    let domain = model.domain().clone();
    match &config.init_design {
        Some(values) => DesignVector::new(values.clone(), domain),
        None => {
            let mut rng = rng_from_seed(derive_seed(config.seed, &[STREAM_INIT_DESIGN]));
            let values = domain.sample_uniform(&mut rng);
            DesignVector::new(values, domain)
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn run_loop(model: &dyn ImplicitModel, config: &BedConfig, method: DesignGradient) -> Result<BedOutcome> {
    config.validate()?;
    let domain = model.domain().clone();
    let mut design = initial_design(model, config)?;
    let input_dim = model.theta_dim() + model.outcome_dim();
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mlp = Mlp::init(&sizes, derive_seed(config.seed, &[STREAM_INIT_CRITIC]))?;
    let mut critic: Option<Critic> = None;
    let mut adam = AdamState::new(&mlp);
    let mut mlp = Some(mlp);
    let mut ges = GesState::new(domain.dim());
    let mut trace = BedTrace::default();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let wrap = |e: Error| Error::Epoch {
            epoch,
            source: Box::new(e),
        };
        let data = draw_epoch(model, design.values(), config.samples, config.seed, epoch as u64).map_err(wrap)?;
        let critic_ref = critic.get_or_insert_with(|| {
            let scaler = InputScaler::fit(data.batch.critic_inputs().slice(ndarray::s![..config.samples, ..]));
            Critic::new(mlp.take().expect("network initialized once"), scaler).expect("scaler fitted on critic inputs")
        });

        let grads = critic_backward(critic_ref, &data.batch, config.tau, config.critic_loss).map_err(wrap)?;
        if !grads.value.is_finite() {
            return Err(wrap(Error::Numeric(format!("SMILE evaluated to {}", grads.value))));
        }

        let frozen: &Critic = critic_ref;
        let grad_xi = match method {
            DesignGradient::Ges => {
                ges_design_gradient(model, &domain, frozen, &data, design.values(), config, &mut ges, epoch as u64)
            }
            DesignGradient::Pathwise => pathwise_design_gradient(model, &data, design.values(), &grads.inputs),
        }
        .map_err(wrap)?;

        trace.records.push(EpochRecord {
            epoch,
            smile: grads.value,
            design: design.values().to_vec(),
            grad_norm_xi: norm(&grad_xi),
            grad_norm_psi: grads.params.norm(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        });

        let stepped: Vec<f64> = design
            .values()
            .iter()
            .zip(&grad_xi)
            .map(|(x, g)| x + config.lr_xi * g)
            .collect();
        design = DesignVector::projected(&stepped, domain.clone());
        adam_step(&mut critic_ref.mlp, &grads.params, &mut adam, config.lr_psi, true).map_err(wrap)?;
        for _ in 1..config.critic_steps {
            let extra = critic_backward(critic_ref, &data.batch, config.tau, config.critic_loss).map_err(wrap)?;
            adam_step(&mut critic_ref.mlp, &extra.params, &mut adam, config.lr_psi, true).map_err(wrap)?;
        }
    }

    Ok(BedOutcome {
        design,
        critic: critic.expect("at least one epoch ran"),
        trace,
    })
}

/// GES runs in unit-box coordinates so one `σ` fits every coordinate; the
/// result is mapped back to design units.
#[allow(clippy::too_many_arguments)]
fn ges_design_gradient(
    model: &dyn ImplicitModel,
    domain: &Domain,
    critic: &Critic,
    data: &EpochData,
    design: &[f64],
    config: &BedConfig,
    state: &mut GesState,
    epoch: u64,
) -> Result<Vec<f64>> {
    let to_design = |u: &[f64]| -> Vec<f64> {
        let raw: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(j, v)| domain.lo[j] + domain.width(j) * v)
            .collect();
        domain.project(&raw)
    };
    let objective = |u: &[f64]| -> Result<f64> {
        let xi = to_design(u);
        let ys = outcomes(model, data.thetas.view(), data.noise.view(), &xi);
        smile_value(critic, &data.batch.with_ys(ys)?, config.tau)
    };
    let u0: Vec<f64> = design
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let w = domain.width(j);
            if w > 0.0 {
                (x - domain.lo[j]) / w
            } else {
                0.0
            }
        })
        .collect();
    let seed = derive_seed(config.seed, &[epoch, STREAM_ES]);
    let g_unit = ges_gradient(objective, &u0, &config.es, state, seed)?;
    Ok(g_unit
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let w = domain.width(j);
            if w > 0.0 {
                g / w
            } else {
                0.0
            }
        })
        .collect())
}

/// `∂I/∂ξ_j = Σ_i ∂I/∂y_ij · ∂y_ij/∂ξ_j`. Outcome `y_i` enters the critic in
/// joint row `i` and in every marginal row `m` with `π(m) = i`.
fn pathwise_design_gradient(
    model: &dyn ImplicitModel,
    data: &EpochData,
    design: &[f64],
    input_grads: &Array2<f64>,
) -> Result<Vec<f64>> {
    let n = data.batch.len();
    let dt = model.theta_dim();
    let dy = model.outcome_dim();
    let mut dy_grads = input_grads.slice(ndarray::s![..n, dt..]).to_owned();
    for (m, &p) in data.batch.perm().iter().enumerate() {
        let row = input_grads.slice(ndarray::s![n + m, dt..]);
        let mut target = dy_grads.row_mut(p);
        target += &row;
    }
    let mut grad = vec![0.0; design.len()];
    let mut deriv = vec![0.0; dy];
    for i in 0..n {
        model.outcome_design_derivative(
            data.thetas.row(i).as_slice().expect("standard layout"),
            design,
            data.noise.row(i).as_slice().expect("standard layout"),
            &mut deriv,
        )?;
        for j in 0..dy.min(design.len()) {
            grad[j] += dy_grads[[i, j]] * deriv[j];
        }
    }
    Ok(grad)
}

/// Frozen-noise SMILE at `design` for the epoch batch; exposed for gradient checks.
#[doc(hidden)]
pub fn frozen_objective(
    model: &dyn ImplicitModel,
    critic: &Critic,
    thetas: &Array2<f64>,
    noise: &Array2<f64>,
    perm: &[usize],
    design: &[f64],
    tau: f64,
) -> Result<f64> {
    let ys = outcomes(model, thetas.view(), noise.view(), design);
    smile_value(critic, &MiBatch::new(thetas.clone(), ys, perm.to_vec())?, tau)
}

/// Pathwise gradient of [`frozen_objective`].
#[doc(hidden)]
pub fn frozen_pathwise_gradient(
    model: &dyn ImplicitModel,
    critic: &Critic,
    thetas: &Array2<f64>,
    noise: &Array2<f64>,
    perm: &[usize],
    design: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    let ys = outcomes(model, thetas.view(), noise.view(), design);
    let batch = MiBatch::new(thetas.clone(), ys, perm.to_vec())?;
    let grads = smile_backward(critic, &batch, tau)?;
    let data = EpochData {
        thetas: thetas.clone(),
        noise: noise.clone(),
        batch,
    };
    pathwise_design_gradient(model, &data, design, &grads.inputs)
}

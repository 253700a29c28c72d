//! Implicit simulator models, their priors and design domains.
//!
//! A model is split into a noise sampler and a deterministic outcome map
//! `y = g(θ, ξ, noise)`. Keeping the noise explicit lets the optimizer reuse the
//! same draws across perturbed designs (common random numbers) and lets the
//! pathwise baseline differentiate the sampling path.

mod linear;
mod pk;
mod rabi;

pub use linear::{GammaNoise, LinearModel};
pub use pk::{PkModel, PK_DOSE};
pub use rabi::{RabiModel, RABI_AMPLITUDE, RABI_GRID};

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::rng::{child_rng, Rng};

/// Axis-aligned box of feasible designs.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config(format!(
                "domain bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if let Some(j) = (0..lo.len()).find(|&j| !(lo[j] <= hi[j]) || !lo[j].is_finite() || !hi[j].is_finite()) {
            return Err(Error::Config(format!(
                "domain coordinate {j} has invalid bounds [{}, {}]",
                lo[j], hi[j]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        self.check(values).is_ok()
    }

    pub fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() {
            return Err(Error::Shape(format!(
                "design has {} coordinates, domain has {}",
                values.len(),
                self.dim()
            )));
        }
        for (j, &v) in values.iter().enumerate() {
            if !(v >= self.lo[j] && v <= self.hi[j]) {
                return Err(Error::Domain {
                    index: j,
                    value: v,
                    lo: self.lo[j],
                    hi: self.hi[j],
                });
            }
        }
        Ok(())
    }

    /// Per-coordinate clamp into the box.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v.is_nan() {
                    self.lo[j]
                } else {
                    v.clamp(self.lo[j], self.hi[j])
                }
            })
            .collect()
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        use rand::Rng as _;
        (0..self.dim())
            .map(|j| {
                if self.width(j) > 0.0 {
                    rng.random_range(self.lo[j]..=self.hi[j])
                } else {
                    self.lo[j]
                }
            })
            .collect()
    }
}

/// A design `ξ` together with the box it must stay in.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector {
    values: Vec<f64>,
    domain: Domain,
}

impl DesignVector {
    pub fn new(values: Vec<f64>, domain: Domain) -> Result<Self> {
        domain.check(&values)?;
        Ok(Self { values, domain })
    }

    /// Clamps `values` into `domain`; never fails on finite or infinite input.
    pub fn projected(values: &[f64], domain: Domain) -> Self {
        Self {
            values: domain.project(values),
            domain,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Paired prior draws and simulated outcomes at one design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub thetas: Array2<f64>,
    pub ys: Array2<f64>,
    pub noise: Array2<f64>,
    pub design: Vec<f64>,
    pub seed: u64,
}

/// A forward simulator with a prior over its parameters.
pub trait ImplicitModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn theta_dim(&self) -> usize;

    fn outcome_dim(&self) -> usize;

    fn domain(&self) -> &Domain;

    fn design_dim(&self) -> usize {
        self.domain().dim()
    }

    /// Number of noise variates consumed per simulated row.
    fn noise_dim(&self) -> usize;

    /// One row of noise variates.
    fn sample_noise_row(&self, rng: &mut Rng, out: &mut [f64]);

    fn sample_prior_row(&self, rng: &mut Rng, out: &mut [f64]);

    /// Unnormalized log prior density; `-inf` outside the support.
    fn prior_log_density(&self, theta: &[f64]) -> f64;

    /// Checks `theta` lies in the model support.
    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Shape(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.theta_dim(),
                theta.len()
            )));
        }
        if self.prior_log_density(theta).is_finite() {
            Ok(())
        } else {
            Err(Error::Support(format!("{} parameters {theta:?}", self.name())))
        }
    }

    /// Deterministic outcome map. Does not validate the design.
    fn outcome(&self, theta: &[f64], design: &[f64], noise: &[f64], out: &mut [f64]);

    /// Diagonal of `∂y/∂ξ` along the sampling path (`y_j` depends on its own
    /// design coordinate only), with the noise held fixed.
    fn outcome_design_derivative(
        &self,
        _theta: &[f64],
        _design: &[f64],
        _noise: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported {
            model: self.name().into(),
            operation: "pathwise design gradients",
        })
    }

    /// Pointwise `log p(y | θ, ξ)`.
    fn log_likelihood(&self, _y: &[f64], _theta: &[f64], _design: &[f64]) -> Result<f64> {
        Err(Error::Unsupported {
            model: self.name().into(),
            operation: "likelihood evaluation",
        })
    }

    /// Map from parameter space to the space MCMC proposals are made in.
    fn to_sampling_space(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    #[allow(clippy::wrong_self_convention)]
    fn from_sampling_space(&self, phi: &[f64]) -> Vec<f64> {
        phi.to_vec()
    }

    /// `log |dθ/dφ|` of the inverse map.
    fn sampling_log_jacobian(&self, _phi: &[f64]) -> f64 {
        0.0
    }

    /// Prior standard deviation per coordinate in the sampling space.
    fn prior_sampling_std(&self) -> Vec<f64>;

    /// Simulates one outcome with noise drawn from `seed`.
    fn simulate(&self, theta: &[f64], design: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.domain().check(design)?;
        self.check_theta(theta)?;
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut noise = vec![0.0; self.noise_dim()];
        self.sample_noise_row(&mut rng, &mut noise);
        let mut y = vec![0.0; self.outcome_dim()];
        self.outcome(theta, design, &noise, &mut y);
        Ok(y)
    }
}

/// Draws `n` prior samples, row `i` from the stream `(seed, i)`.
pub fn sample_prior(model: &dyn ImplicitModel, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Argument("prior sample count must be at least 1".into()));
    }
    let mut thetas = Array2::zeros((n, model.theta_dim()));
    for (i, mut row) in thetas.rows_mut().into_iter().enumerate() {
        let mut rng = child_rng(seed, &[i as u64]);
        model.sample_prior_row(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    Ok(thetas)
}

/// Draws `n` rows of noise, row `i` from the stream `(seed, i)`.
pub fn sample_noise(model: &dyn ImplicitModel, n: usize, seed: u64) -> Array2<f64> {
    let mut noise = Array2::zeros((n, model.noise_dim()));
    for (i, mut row) in noise.rows_mut().into_iter().enumerate() {
        let mut rng = child_rng(seed, &[i as u64]);
        model.sample_noise_row(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    noise
}

fn row_slice<'a>(row: &'a ArrayView1<'_, f64>) -> &'a [f64] {
    row.as_slice().expect("standard layout")
}

/// Draws noise from `seed` and simulates every row of `thetas` at `design`.
pub fn simulate_batch(
    model: &dyn ImplicitModel,
    thetas: Array2<f64>,
    design: &[f64],
    seed: u64,
) -> Result<SimBatch> {
    model.domain().check(design)?;
    if thetas.ncols() != model.theta_dim() {
        return Err(Error::Shape(format!(
            "theta batch has {} columns, model expects {}",
            thetas.ncols(),
            model.theta_dim()
        )));
    }
    let noise = sample_noise(model, thetas.nrows(), seed);
    let ys = outcomes(model, thetas.view(), noise.view(), design);
    Ok(SimBatch {
        thetas,
        ys,
        noise,
        design: design.to_vec(),
        seed,
    })
}

/// Outcomes for every row of `thetas`/`noise` at `design`.
pub fn outcomes(
    model: &dyn ImplicitModel,
    thetas: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
    design: &[f64],
) -> Array2<f64> {
    let mut ys = Array2::zeros((thetas.nrows(), model.outcome_dim()));
    for ((theta, eps), mut y) in thetas
        .rows()
        .into_iter()
        .zip(noise.rows())
        .zip(ys.rows_mut())
    {
        model.outcome(
            row_slice(&theta),
            design,
            row_slice(&eps),
            y.as_slice_mut().expect("standard layout"),
        );
    }
    ys
}

/// Writes a batch as CSV with columns `theta_0.., y_0..`.
pub fn batch_to_csv(batch: &SimBatch) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..batch.thetas.ncols())
        .map(|i| format!("theta_{i}"))
        .chain((0..batch.ys.ncols()).map(|j| format!("y_{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, y) in batch.thetas.rows().into_iter().zip(batch.ys.rows()) {
        let row: Vec<String> = t.iter().chain(y.iter()).map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

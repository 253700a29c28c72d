//! Noisy linear regression: `y_j = θ1 + θ2 ξ_j + ε_j + ν_j`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{Domain, ImplicitModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

const PRIOR_SD: f64 = 3.0;
const GAMMA_SHAPE: f64 = 2.0;
const GAMMA_PARAM: f64 = 2.0;
const DESIGN_BOUND: f64 = 10.0;

/// How the `Γ(2, 2)` noise term is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaNoise {
    /// Shape 2, scale 2: mean 4, variance 8.
    ShapeScale,
    /// Shape 2, rate 2: mean 1, variance 0.5.
    ShapeRate,
    /// No Gamma term (Gaussian noise only).
    Off,
}

impl GammaNoise {
    /// Scale parameter of the Gamma term, `None` when the term is absent.
    pub fn scale(self) -> Option<f64> {
        match self {
            GammaNoise::ShapeScale => Some(GAMMA_PARAM),
            GammaNoise::ShapeRate => Some(1.0 / GAMMA_PARAM),
            GammaNoise::Off => None,
        }
    }

    pub fn mean(self) -> f64 {
        self.scale().map_or(0.0, |s| GAMMA_SHAPE * s)
    }

    pub fn variance(self) -> f64 {
        self.scale().map_or(0.0, |s| GAMMA_SHAPE * s * s)
    }
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    domain: Domain,
    gamma: GammaNoise,
    noise_suppressed: bool,
}

impl LinearModel {
    /// `d` measurements with designs in `[-10, 10]`.
    pub fn new(d: usize, gamma: GammaNoise) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("linear model needs at least one measurement".into()));
        }
        Ok(Self {
            domain: Domain::uniform(d, -DESIGN_BOUND, DESIGN_BOUND)?,
            gamma,
            noise_suppressed: false,
        })
    }

    /// Test hook: all noise variates become zero, making the model the
    /// noiseless formula `θ1 + θ2 ξ_j`.
    #[doc(hidden)]
    pub fn with_noise_suppressed(mut self) -> Self {
        self.noise_suppressed = true;
        self
    }

    pub fn gamma(&self) -> GammaNoise {
        self.gamma
    }

    /// Density of `ε + ν` at `r`, by composite Gauss-Legendre quadrature over
    /// the Gamma variate `ν`. Returned in log space.
    pub fn log_noise_density(&self, r: f64) -> f64 {
        match self.gamma.scale() {
            None => log_std_normal(r),
            Some(scale) => log_gauss_gamma_convolution(r, scale),
        }
    }
}

fn log_std_normal(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

const PANELS: usize = 24;
const PANEL_WIDTH: f64 = 1.0;

fn gauss_legendre_16() -> &'static ([f64; 16], [f64; 16]) {
    static NODES: OnceLock<([f64; 16], [f64; 16])> = OnceLock::new();
    NODES.get_or_init(gauss_legendre::<16>)
}

/// Nodes and weights on [-1, 1] via Newton iteration on the Legendre recurrence.
fn gauss_legendre<const N: usize>() -> ([f64; N], [f64; N]) {
    let mut x = [0.0; N];
    let mut w = [0.0; N];
    let n = N as f64;
    for i in 0..N.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..N {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[N - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[N - 1 - i] = w[i];
    }
    (x, w)
}

/// `log ∫_0^∞ φ(r - ν) Γ(ν; 2, scale) dν`.
///
/// The integrand is log-concave with curvature at least that of the unit
/// Gaussian, so a 24-unit window around its mode holds all of its mass.
fn log_gauss_gamma_convolution(r: f64, scale: f64) -> f64 {
    let rate = 1.0 / scale;
    let mode = (r - rate).max(0.0);
    let start = (mode - 0.5 * PANELS as f64 * PANEL_WIDTH).max(0.0);
    let (nodes, weights) = gauss_legendre_16();
    let log_norm = -2.0 * scale.ln(); // Γ(2) = 1
    let half = 0.5 * PANEL_WIDTH;
    let mut terms = [0.0; PANELS * 16];
    let mut k = 0;
    for p in 0..PANELS {
        let mid = start + (p as f64 + 0.5) * PANEL_WIDTH;
        for (x, w) in nodes.iter().zip(weights) {
            let nu = mid + half * x;
            terms[k] = (half * w).ln() + log_std_normal(r - nu) + log_norm + nu.ln() - nu * rate;
            k += 1;
        }
    }
    log_sum_exp(&terms)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl ImplicitModel for LinearModel {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn outcome_dim(&self) -> usize {
        self.domain.dim()
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Per measurement: the Gaussian term then the Gamma term.
    fn noise_dim(&self) -> usize {
        2 * self.domain.dim()
    }

    fn sample_noise_row(&self, rng: &mut Rng, out: &mut [f64]) {
        if self.noise_suppressed {
            out.fill(0.0);
            return;
        }
        let gamma = self
            .gamma
            .scale()
            .map(|s| Gamma::new(GAMMA_SHAPE, s).expect("valid gamma parameters"));
        for pair in out.chunks_exact_mut(2) {
            pair[0] = rng.sample(StandardNormal);
            pair[1] = gamma.as_ref().map_or(0.0, |g| g.sample(rng));
        }
    }

    fn sample_prior_row(&self, rng: &mut Rng, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = PRIOR_SD * z;
        }
    }

    fn prior_log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .map(|t| log_std_normal(t / PRIOR_SD) - PRIOR_SD.ln())
            .sum()
    }

    fn outcome(&self, theta: &[f64], design: &[f64], noise: &[f64], out: &mut [f64]) {
        for ((y, &xi), eps) in out.iter_mut().zip(design).zip(noise.chunks_exact(2)) {
            *y = theta[0] + theta[1] * xi + eps[0] + eps[1];
        }
    }

    fn outcome_design_derivative(
        &self,
        theta: &[f64],
        _design: &[f64],
        _noise: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(theta[1]);
        Ok(())
    }

    fn log_likelihood(&self, y: &[f64], theta: &[f64], design: &[f64]) -> Result<f64> {
        if y.len() != design.len() || design.len() != self.domain.dim() {
            return Err(Error::Shape(format!(
                "outcome length {} and design length {} for a {}-measurement model",
                y.len(),
                design.len(),
                self.domain.dim()
            )));
        }
        let total: f64 = y
            .iter()
            .zip(design)
            .map(|(&yj, &xi)| self.log_noise_density(yj - theta[0] - theta[1] * xi))
            .sum();
        if total.is_nan() || total == f64::INFINITY {
            return Err(Error::Numeric(format!("linear log-likelihood evaluated to {total}")));
        }
        Ok(total)
    }

    fn prior_sampling_std(&self) -> Vec<f64> {
        vec![PRIOR_SD; 2]
    }
}

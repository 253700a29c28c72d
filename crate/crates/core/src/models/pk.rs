//! One-compartment pharmacokinetic model with first-order absorption.
//!
//! `z(t) = (D/V) · k_a/(k_a − k_e) · (e^{−k_e t} − e^{−k_a t}) · (1 + ε1) + ε2`
//! with `ε1 ~ N(0, 0.01)` and `ε2 ~ N(0, 0.1)` (second argument a variance),
//! one blood sample per patient, sampling times in `[0, 24]` hours.

use rand_distr::StandardNormal;

use super::{Domain, ImplicitModel};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

pub const PK_DOSE: f64 = 400.0;

const LOG_MEANS: [f64; 3] = [2.995_732_273_553_991, 0.0, -std::f64::consts::LN_10]; // ln 20, ln 1, ln 0.1
const LOG_VAR: f64 = 0.05;
const MULT_NOISE_VAR: f64 = 0.01;
const ADD_NOISE_VAR: f64 = 0.1;
const T_MAX: f64 = 24.0;

#[derive(Debug, Clone)]
pub struct PkModel {
    domain: Domain,
    dose: f64,
    noise_suppressed: bool,
}

impl PkModel {
    pub fn new(d: usize) -> Result<Self> {
        Self::with_dose(d, PK_DOSE)
    }

    pub fn with_dose(d: usize, dose: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("PK model needs at least one sampling time".into()));
        }
        if !(dose > 0.0) || !dose.is_finite() {
            return Err(Error::Config(format!("dose must be positive, got {dose}")));
        }
        Ok(Self {
            domain: Domain::uniform(d, 0.0, T_MAX)?,
            dose,
            noise_suppressed: false,
        })
    }

    #[doc(hidden)]
    pub fn with_noise_suppressed(mut self) -> Self {
        self.noise_suppressed = true;
        self
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    /// Noiseless concentration curve.
    pub fn concentration(&self, theta: &[f64], t: f64) -> f64 {
        let (v, ka, ke) = (theta[0], theta[1], theta[2]);
        self.dose / v * ka / (ka - ke) * ((-ke * t).exp() - (-ka * t).exp())
    }

    /// `∂z/∂t` along the sampling path with multiplicative noise `eps1`.
    pub fn pathwise_grad(&self, theta: &[f64], t: f64, eps1: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if !(0.0..=T_MAX).contains(&t) {
            return Err(Error::Domain {
                index: 0,
                value: t,
                lo: 0.0,
                hi: T_MAX,
            });
        }
        Ok(self.raw_grad(theta, t, eps1))
    }

    fn raw_grad(&self, theta: &[f64], t: f64, eps1: f64) -> f64 {
        let (v, ka, ke) = (theta[0], theta[1], theta[2]);
        self.dose / v * ka / (ka - ke) * (ka * (-ka * t).exp() - ke * (-ke * t).exp()) * (1.0 + eps1)
    }
}

impl ImplicitModel for PkModel {
    fn name(&self) -> &'static str {
        "pk"
    }

    fn theta_dim(&self) -> usize {
        3
    }

    fn outcome_dim(&self) -> usize {
        self.domain.dim()
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Per sampling time: multiplicative then additive noise.
    fn noise_dim(&self) -> usize {
        2 * self.domain.dim()
    }

    fn sample_noise_row(&self, rng: &mut Rng, out: &mut [f64]) {
        if self.noise_suppressed {
            out.fill(0.0);
            return;
        }
        let (s1, s2) = (MULT_NOISE_VAR.sqrt(), ADD_NOISE_VAR.sqrt());
        for pair in out.chunks_exact_mut(2) {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            pair[0] = s1 * z1;
            pair[1] = s2 * z2;
        }
    }

    /// Log-normal prior; draws violating `k_a > k_e` are redrawn.
    fn sample_prior_row(&self, rng: &mut Rng, out: &mut [f64]) {
        let sd = LOG_VAR.sqrt();
        loop {
            for (v, mu) in out.iter_mut().zip(LOG_MEANS) {
                let z: f64 = rng.sample(StandardNormal);
                *v = (mu + sd * z).exp();
            }
            if out[1] > out[2] {
                return;
            }
        }
    }

    fn prior_log_density(&self, theta: &[f64]) -> f64 {
        if theta.iter().any(|&t| !(t > 0.0)) || !(theta[1] > theta[2]) {
            return f64::NEG_INFINITY;
        }
        theta
            .iter()
            .zip(LOG_MEANS)
            .map(|(&t, mu)| {
                let l = t.ln();
                -0.5 * (l - mu).powi(2) / LOG_VAR - l
            })
            .sum()
    }

    fn outcome(&self, theta: &[f64], design: &[f64], noise: &[f64], out: &mut [f64]) {
        for ((z, &t), eps) in out.iter_mut().zip(design).zip(noise.chunks_exact(2)) {
            *z = self.concentration(theta, t) * (1.0 + eps[0]) + eps[1];
        }
    }

    fn outcome_design_derivative(
        &self,
        theta: &[f64],
        design: &[f64],
        noise: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        for ((g, &t), eps) in out.iter_mut().zip(design).zip(noise.chunks_exact(2)) {
            *g = self.raw_grad(theta, t, eps[0]);
        }
        Ok(())
    }

    fn to_sampling_space(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| t.ln()).collect()
    }

    fn from_sampling_space(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().map(|p| p.exp()).collect()
    }

    fn sampling_log_jacobian(&self, phi: &[f64]) -> f64 {
        phi.iter().sum()
    }

    fn prior_sampling_std(&self) -> Vec<f64> {
        vec![LOG_VAR.sqrt(); 3]
    }
}

//! Two-level Rabi oscillation surrogate for pulse tuning.
//!
//! Parameters are `θ = (Rabi frequency, resonance offset)`. Each measurement
//! has a pulse duration `t ∈ [0, 1]` and a detuning `Δf ∈ [−10, 10]`; the design
//! vector interleaves them as `[t_1, Δf_1, t_2, Δf_2, ...]`. The photon count is
//!
//! `A · θ1² / Ω² · sin²(½ t Ω) + η`,  `Ω² = θ1² + (Δf − θ2)²`,  `η ~ N(0, 1)`.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Domain, ImplicitModel};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const RABI_AMPLITUDE: f64 = 100.0;
/// Points per axis of the precomputed signal grid.
pub const RABI_GRID: usize = 101;

const RABI_FREQ_BOUNDS: (f64, f64) = (0.1, 10.0);
const OFFSET_BOUNDS: (f64, f64) = (-10.0, 10.0);
const DURATION_BOUNDS: (f64, f64) = (0.0, 1.0);
const DETUNING_BOUNDS: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone)]
pub struct RabiModel {
    domain: Domain,
    measurements: usize,
    noise_suppressed: bool,
}

impl RabiModel {
    pub fn new(measurements: usize) -> Result<Self> {
        if measurements == 0 {
            return Err(Error::Config("quantum model needs at least one measurement".into()));
        }
        let mut lo = Vec::with_capacity(2 * measurements);
        let mut hi = Vec::with_capacity(2 * measurements);
        for _ in 0..measurements {
            lo.extend([DURATION_BOUNDS.0, DETUNING_BOUNDS.0]);
            hi.extend([DURATION_BOUNDS.1, DETUNING_BOUNDS.1]);
        }
        Ok(Self {
            domain: Domain::new(lo, hi)?,
            measurements,
            noise_suppressed: false,
        })
    }

    #[doc(hidden)]
    pub fn with_noise_suppressed(mut self) -> Self {
        self.noise_suppressed = true;
        self
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    /// Noiseless photon count for one `(duration, detuning)` setting.
    pub fn signal(theta: &[f64], duration: f64, detuning: f64) -> f64 {
        let rabi2 = theta[0] * theta[0];
        let delta = detuning - theta[1];
        let omega2 = rabi2 + delta * delta;
        let s = (0.5 * duration * omega2.sqrt()).sin();
        RABI_AMPLITUDE * rabi2 / omega2 * s * s
    }

    /// Noiseless signal on a `RABI_GRID × RABI_GRID` grid; rows index
    /// duration, columns index detuning, both spanning their full ranges.
    pub fn signal_grid(theta: &[f64]) -> Array2<f64> {
        let step = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (RABI_GRID - 1) as f64;
        Array2::from_shape_fn((RABI_GRID, RABI_GRID), |(i, j)| {
            Self::signal(theta, step(DURATION_BOUNDS, i), step(DETUNING_BOUNDS, j))
        })
    }
}

impl ImplicitModel for RabiModel {
    fn name(&self) -> &'static str {
        "quantum"
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn outcome_dim(&self) -> usize {
        self.measurements
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn noise_dim(&self) -> usize {
        self.measurements
    }

    fn sample_noise_row(&self, rng: &mut Rng, out: &mut [f64]) {
        if self.noise_suppressed {
            out.fill(0.0);
            return;
        }
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    fn sample_prior_row(&self, rng: &mut Rng, out: &mut [f64]) {
        out[0] = rng.random_range(RABI_FREQ_BOUNDS.0..RABI_FREQ_BOUNDS.1);
        out[1] = rng.random_range(OFFSET_BOUNDS.0..OFFSET_BOUNDS.1);
    }

    fn prior_log_density(&self, theta: &[f64]) -> f64 {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if inside(theta[0], RABI_FREQ_BOUNDS) && inside(theta[1], OFFSET_BOUNDS) {
            -((RABI_FREQ_BOUNDS.1 - RABI_FREQ_BOUNDS.0) * (OFFSET_BOUNDS.1 - OFFSET_BOUNDS.0)).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn outcome(&self, theta: &[f64], design: &[f64], noise: &[f64], out: &mut [f64]) {
        for ((y, pair), eta) in out.iter_mut().zip(design.chunks_exact(2)).zip(noise) {
            *y = Self::signal(theta, pair[0], pair[1]) + eta;
        }
    }

    fn prior_sampling_std(&self) -> Vec<f64> {
        let sd = |(lo, hi): (f64, f64)| (hi - lo) / 12f64.sqrt();
        vec![sd(RABI_FREQ_BOUNDS), sd(OFFSET_BOUNDS)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sample_prior;
    use std::f64::consts::PI;

    const THETA: [f64; 2] = [3.85, 1.67];

    #[test]
    fn zero_duration_gives_zero() {
        let m = RabiModel::new(1).unwrap().with_noise_suppressed();
        assert_eq!(m.simulate(&THETA, &[0.0, 4.0], 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn full_flip_on_resonance() {
        let theta = [4.0, 1.5];
        let m = RabiModel::new(1).unwrap().with_noise_suppressed();
        let y = m.simulate(&theta, &[PI / theta[0], theta[1]], 0).unwrap()[0];
        assert!((y - RABI_AMPLITUDE).abs() < 1e-9, "{y}");
    }

    #[test]
    fn even_in_detuning() {
        for d in [0.3, 2.0, 7.5] {
            let a = RabiModel::signal(&THETA, 0.7, THETA[1] + d);
            let b = RabiModel::signal(&THETA, 0.7, THETA[1] - d);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn design_domain_is_interleaved() {
        let m = RabiModel::new(2).unwrap();
        assert_eq!(m.domain().lo, vec![0.0, -10.0, 0.0, -10.0]);
        assert_eq!(m.domain().hi, vec![1.0, 10.0, 1.0, 10.0]);
        assert!(matches!(m.simulate(&THETA, &[1.5, 0.0, 0.5, 0.0], 0), Err(Error::Domain { index: 0, .. })));
    }

    #[test]
    fn prior_inside_box_and_centred() {
        let m = RabiModel::new(1).unwrap();
        let thetas = sample_prior(&m, 100_000, 2).unwrap();
        assert!(thetas
            .rows()
            .into_iter()
            .all(|r| m.prior_log_density(&[r[0], r[1]]).is_finite()));
        let col = thetas.column(1);
        let mean = col.mean().unwrap();
        let se = (20.0 / 12f64.sqrt()) / (col.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean}");
        assert_eq!(sample_prior(&m, 10, 2).unwrap(), sample_prior(&m, 10, 2).unwrap());
    }

    #[test]
    fn grid_matches_pointwise_signal() {
        let grid = RabiModel::signal_grid(&THETA);
        assert_eq!(grid.dim(), (RABI_GRID, RABI_GRID));
        assert_eq!(grid[[0, 17]], 0.0);
        assert!((grid[[50, 60]] - RabiModel::signal(&THETA, 0.5, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn no_pathwise_gradient() {
        let m = RabiModel::new(1).unwrap();
        let mut out = [0.0];
        assert!(matches!(
            m.outcome_design_derivative(&THETA, &[0.5, 0.0], &[0.0], &mut out),
            Err(Error::Unsupported { .. })
        ));
    }
}

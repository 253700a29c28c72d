//! Estimators and densities against independent closed forms.

use rand::Rng as _;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use sagabed::mi::{mine_lower_bound, nmc_estimate, smile_lower_bound};
use sagabed::models::{GammaNoise, ImplicitModel, LinearModel};
use sagabed::rng::rng_from_seed;

/// Density of `N(0,1) + Gamma(shape 2, rate λ)`:
/// `λ² exp(λ²/2 − λr) (mΦ(m) + φ(m))` with `m = r − λ`.
fn gauss_gamma_density(r: f64, rate: f64) -> f64 {
    let n = Normal::standard();
    let m = r - rate;
    rate * rate * (rate * rate / 2.0 - rate * r).exp() * (m * n.cdf(m) + n.pdf(m))
}

#[test]
fn linear_likelihood_matches_closed_form_convolution() {
    for gamma in [GammaNoise::ShapeScale, GammaNoise::ShapeRate] {
        let rate = 1.0 / gamma.scale().unwrap();
        let model = LinearModel::new(3, gamma).unwrap();
        let theta = [0.7, -1.3];
        let design = [-4.0, 0.5, 8.0];
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let y: Vec<f64> = design
                .iter()
                .map(|xi| theta[0] + theta[1] * xi + rng.random_range(-3.0..25.0))
                .collect();
            let expected: f64 = y
                .iter()
                .zip(&design)
                .map(|(yj, xi)| gauss_gamma_density(yj - theta[0] - theta[1] * xi, rate).ln())
                .sum();
            let got = model.log_likelihood(&y, &theta, &design).unwrap();
            assert!((got - expected).abs() < 1e-8, "{gamma:?} y = {y:?}: {got} vs {expected}");
        }
    }
}

#[test]
fn gaussian_linear_nmc_matches_analytic_information() {
    // With Gaussian noise only, I = ½ log(1 + 9(1 + ξ²)) for one measurement.
    let model = LinearModel::new(1, GammaNoise::Off).unwrap();
    for (i, xi) in [0.0f64, 5.0, 10.0].into_iter().enumerate() {
        let exact = 0.5 * (1.0 + 9.0 * (1.0 + xi * xi)).ln();
        let est = nmc_estimate(&model, &[xi], 1000, 1000, 40 + i as u64).unwrap();
        let z = (est.value - exact) / est.std_err;
        assert!(z.abs() < 3.0, "ξ = {xi}: {} ± {} vs {exact}", est.value, est.std_err);
    }
}

#[test]
fn unclipped_smile_equals_mine() {
    let mut rng = rng_from_seed(5);
    for _ in 0..100 {
        let n = rng.random_range(2..200);
        let scale = rng.random_range(0.1..20.0);
        let joint: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let marg: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let smile = smile_lower_bound(&joint, &marg, f64::INFINITY).unwrap();
        let mine = mine_lower_bound(&joint, &marg).unwrap();
        assert!((smile - mine).abs() < 1e-12, "{smile} vs {mine}");
    }
}

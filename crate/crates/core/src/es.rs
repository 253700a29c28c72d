//! Stochastic approximate gradients for black-box objectives.
//!
//! [`es_gradient`] is the antithetic Gaussian-smoothing estimator
//! `(1/(2σP)) Σ_i [f(x + σε_i) − f(x − σε_i)] ε_i` with `ε_i ~ N(0, I)`.
//!
//! [`ges_gradient`] draws the perturbations from the guided search
//! distribution `N(0, nΣ)`, `Σ = (α/n) I + ((1 − α)/k) U Uᵀ`, where `U` spans
//! the last few gradient estimates. The `n` factor keeps the overall
//! perturbation size of the isotropic estimator, so an empty subspace gives
//! exactly [`es_gradient`]. The estimate is divided by `λ = α + (1 − α) n / k`,
//! the eigenvalue of `nΣ` on the subspace: components inside the subspace are
//! then unbiased while the orthogonal complement is shrunk by `α / λ`.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Column-orthonormality tolerance accepted by [`ges_covariance`].
const ORTHONORMAL_TOL: f64 = 1e-8;
/// Relative residual below which a history vector adds no new direction.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsConfig {
    pub sigma: f64,
    pub num_pairs: usize,
    pub alpha: f64,
    pub k: usize,
}

impl EsConfig {
    pub fn new(sigma: f64, num_pairs: usize, alpha: f64, k: usize) -> Result<Self> {
        let cfg = Self {
            sigma,
            num_pairs,
            alpha,
            k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `σ = 0.01` (in unit-box coordinates), `P = max(8, n/4)`, `α = 0.5`,
    /// `k = min(10, n)`.
    pub fn defaults_for(dim: usize) -> Self {
        Self {
            sigma: 0.01,
            num_pairs: (dim / 4).max(8),
            alpha: 0.5,
            k: dim.clamp(1, 10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.num_pairs == 0 {
            return Err(Error::Config("num_pairs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::Config("subspace dimension k must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_sigma_pairs(sigma: f64, num_pairs: usize) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    if num_pairs == 0 {
        return Err(Error::Argument("at least one antithetic pair is required".into()));
    }
    Ok(())
}

/// Evaluates `f` at `x ± σ ε_i` and returns
/// `(1/(2σP)) Σ_i [f(x+σε_i) − f(x−σε_i)] ε_i`.
fn antithetic_estimate<F>(f: &F, x: &[f64], sigma: f64, perturbations: &[Vec<f64>]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let points: Vec<(usize, f64)> = (0..perturbations.len())
        .flat_map(|i| [(i, 1.0), (i, -1.0)])
        .collect();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(i, sign)| {
            let p: Vec<f64> = x
                .iter()
                .zip(&perturbations[i])
                .map(|(xj, ej)| xj + sign * sigma * ej)
                .collect();
            let v = f(&p)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective returned {v} at perturbation {i} ({}): {p:?}",
                    if sign > 0.0 { "+" } else { "-" }
                )));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; x.len()];
    let scale = 1.0 / (2.0 * sigma * perturbations.len() as f64);
    for (i, eps) in perturbations.iter().enumerate() {
        let diff = values[2 * i] - values[2 * i + 1];
        for (g, e) in grad.iter_mut().zip(eps) {
            *g += scale * diff * e;
        }
    }
    Ok(grad)
}

fn standard_normal_rows(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Antithetic isotropic ES gradient; `f` is evaluated exactly `2P` times.
pub fn es_gradient<F>(f: F, x: &[f64], sigma: f64, num_pairs: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_sigma_pairs(sigma, num_pairs)?;
    let eps = standard_normal_rows(num_pairs, x.len(), seed);
    antithetic_estimate(&f, x, sigma, &eps)
}

/// `Σ` of the guided search distribution and a factor `A` with `A Aᵀ = Σ`.
#[derive(Debug, Clone)]
pub struct GesCovariance {
    pub sigma: Array2<f64>,
    /// `n × (n + k)`: `[√(α/n) I | √((1−α)/k) U]`.
    pub factor: Array2<f64>,
}

/// Builds `Σ = (α/n) I_n + ((1−α)/k) U Uᵀ` for a column-orthonormal `U` (`n × k`).
pub fn ges_covariance(basis: &Array2<f64>, alpha: f64, n: usize, k: usize) -> Result<GesCovariance> {
    if basis.dim() != (n, k) {
        return Err(Error::Contract(format!(
            "basis has shape {:?}, expected ({n}, {k})",
            basis.dim()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if n == 0 {
        return Err(Error::Argument("dimension must be positive".into()));
    }
    let gram = basis.t().dot(basis);
    let off = gram
        .indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if off > ORTHONORMAL_TOL {
        return Err(Error::Contract(format!(
            "basis columns are not orthonormal (max |UᵀU − I| = {off:e})"
        )));
    }
    let (alpha, iso) = if k == 0 { (1.0, 1.0 / n as f64) } else { (alpha, alpha / n as f64) };
    let mut factor = Array2::zeros((n, n + k));
    for i in 0..n {
        factor[[i, i]] = iso.sqrt();
    }
    let mut sigma = Array2::from_diag(&Array1::from_elem(n, iso));
    if k > 0 {
        let sub = (1.0 - alpha) / k as f64;
        factor
            .slice_mut(ndarray::s![.., n..])
            .assign(&(basis * sub.sqrt()));
        sigma = sigma + basis.dot(&basis.t()) * sub;
    }
    Ok(GesCovariance { sigma, factor })
}

/// Rolling window of recent gradient estimates and an orthonormal basis of
/// their span.
#[derive(Debug, Clone, PartialEq)]
pub struct GesState {
    dim: usize,
    history: VecDeque<Vec<f64>>,
    basis: Array2<f64>,
}

impl GesState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            history: VecDeque::new(),
            basis: Array2::zeros((dim, 0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn history(&self) -> &VecDeque<Vec<f64>> {
        &self.history
    }

    /// `n × k'` with `k' ≤ k` orthonormal columns.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Appends `grad` (evicting the oldest beyond `k`) and re-orthonormalizes.
    pub fn update(&mut self, grad: &[f64], k: usize) -> Result<()> {
        if grad.len() != self.dim {
            return Err(Error::Contract(format!(
                "gradient of length {} for a {}-dimensional subspace",
                grad.len(),
                self.dim
            )));
        }
        if k == 0 {
            return Err(Error::Argument("subspace dimension k must be at least 1".into()));
        }
        self.history.push_back(grad.to_vec());
        while self.history.len() > k {
            self.history.pop_front();
        }
        self.basis = orthonormalize(self.dim, self.history.iter().rev());
        Ok(())
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass; the newest
/// vectors are taken first.
fn orthonormalize<'a>(dim: usize, vectors: impl Iterator<Item = &'a Vec<f64>>) -> Array2<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < RANK_TOL * norm0.max(1.0) {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        cols.push(w);
    }
    let mut basis = Array2::zeros((dim, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        basis.column_mut(j).assign(&Array1::from(c.clone()));
    }
    basis
}

/// Functional form of [`GesState::update`].
pub fn subspace_update(mut state: GesState, new_grad: &[f64], k: usize) -> Result<GesState> {
    state.update(new_grad, k)?;
    Ok(state)
}

/// Guided-ES estimate under the current subspace, without touching `state`.
pub fn ges_estimate<F>(f: F, x: &[f64], config: &EsConfig, state: &GesState, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    config.validate()?;
    let n = x.len();
    if state.dim() != n {
        return Err(Error::Contract(format!(
            "state tracks {} dimensions, design has {n}",
            state.dim()
        )));
    }
    let k_eff = state.basis().ncols();
    if k_eff == 0 {
        return es_gradient(f, x, config.sigma, config.num_pairs, seed);
    }
    let cov = ges_covariance(state.basis(), config.alpha, n, k_eff)?;
    let scale = (n as f64).sqrt();
    let z = standard_normal_rows(config.num_pairs, n + k_eff, seed);
    let eps: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| {
            let zi = Array1::from(zi.clone());
            (cov.factor.dot(&zi) * scale).to_vec()
        })
        .collect();
    let lambda = config.alpha + (1.0 - config.alpha) * n as f64 / k_eff as f64;
    let grad = antithetic_estimate(&f, x, config.sigma, &eps)?;
    Ok(grad.into_iter().map(|g| g / lambda).collect())
}

/// Guided-ES gradient; the estimate is also pushed into the subspace history.
pub fn ges_gradient<F>(f: F, x: &[f64], config: &EsConfig, state: &mut GesState, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let grad = ges_estimate(f, x, config, state, seed)?;
    state.update(&grad, config.k)?;
    Ok(grad)
}

/// Max-abs deviation of `UᵀU` from the identity.
pub fn orthonormality_error(basis: &Array2<f64>) -> f64 {
    let gram = basis.t().dot(basis);
    gram.indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn constant_objective_gives_exact_zero() {
        let g = es_gradient(|_| Ok(3.25), &[0.1, -2.0, 5.0], 0.3, 9, 1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let cfg = EsConfig::new(0.3, 4, 0.5, 2).unwrap();
        let mut state = GesState::new(3);
        state.update(&[1.0, 0.0, 0.0], 2).unwrap();
        let g = ges_gradient(|_| Ok(-1.0), &[0.0; 3], &cfg, &mut state, 5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(state.history().back().unwrap(), &vec![0.0; 3]);
        assert_eq!(state.basis().ncols(), 1);
    }

    #[test]
    fn evaluation_budget_is_two_p() {
        let calls = AtomicUsize::new(0);
        es_gradient(
            |x| {
                calls.fetch_add(1, Ordering::Relaxed);
                Ok(x[0])
            },
            &[0.0, 0.0],
            0.1,
            7,
            0,
        )
        .unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 14);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let err = es_gradient(|x| Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 }), &[0.0], 0.1, 4, 2)
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("perturbation")));
    }

    #[test]
    fn argument_validation() {
        assert!(es_gradient(|_| Ok(0.0), &[0.0], 0.0, 1, 0).is_err());
        assert!(es_gradient(|_| Ok(0.0), &[0.0], 0.1, 0, 0).is_err());
        assert!(EsConfig::new(0.1, 1, 1.5, 1).is_err());
        assert!(EsConfig::new(0.1, 1, 0.5, 0).is_err());
        let d = EsConfig::defaults_for(50);
        assert_eq!((d.num_pairs, d.k, d.alpha), (12, 10, 0.5));
        assert_eq!(EsConfig::defaults_for(1).num_pairs, 8);
        assert_eq!(EsConfig::defaults_for(1).k, 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v.sin()).sum::<f64>());
        let a = es_gradient(f, &[0.3, 0.9], 0.05, 5, 42).unwrap();
        let b = es_gradient(f, &[0.3, 0.9], 0.05, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_matches_isotropic_es() {
        let f = |x: &[f64]| Ok(x[0] * x[0] - 3.0 * x[1] + x[2].exp());
        let cfg = EsConfig::new(0.2, 6, 0.3, 2).unwrap();
        let mut state = GesState::new(3);
        let a = ges_gradient(f, &[0.1, 0.2, 0.3], &cfg, &mut state, 77).unwrap();
        let b = es_gradient(f, &[0.1, 0.2, 0.3], 0.2, 6, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(state.history().len(), 1);
    }

    #[test]
    fn covariance_limits() {
        let n = 4;
        let u = array![[1.0], [0.0], [0.0], [0.0]];
        let iso = ges_covariance(&u, 1.0, n, 1).unwrap();
        let expected = Array2::<f64>::eye(n) / n as f64;
        assert!(iso.sigma.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15));
        let sub = ges_covariance(&u, 0.0, n, 1).unwrap();
        let mut e1 = Array2::<f64>::zeros((n, n));
        e1[[0, 0]] = 1.0;
        assert_eq!(sub.sigma, e1);
    }

    #[test]
    fn covariance_rejects_non_orthonormal_basis() {
        let u = array![[1.0, 1.0], [0.0, 0.0], [0.0, 1.0]];
        assert!(matches!(ges_covariance(&u, 0.5, 3, 2), Err(Error::Contract(_))));
        let u = array![[2.0], [0.0]];
        assert!(matches!(ges_covariance(&u, 0.5, 2, 1), Err(Error::Contract(_))));
        assert!(matches!(ges_covariance(&array![[1.0], [0.0]], 0.5, 2, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn single_gradient_basis_is_its_direction() {
        let s = subspace_update(GesState::new(3), &[3.0, 0.0, 4.0], 2).unwrap();
        assert_eq!(s.basis().ncols(), 1);
        let col = s.basis().column(0);
        assert!((col[0] - 0.6).abs() < 1e-15 && col[1] == 0.0 && (col[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicate_gradients_collapse_to_one_column() {
        let mut s = GesState::new(3);
        s.update(&[1.0, 2.0, 3.0], 5).unwrap();
        s.update(&[1.0, 2.0, 3.0], 5).unwrap();
        assert_eq!(s.history().len(), 2);
        assert_eq!(s.basis().ncols(), 1);
        // also scale-invariant for large gradients
        let mut s = GesState::new(2);
        s.update(&[1e9, 3e9], 5).unwrap();
        s.update(&[1e9, 3e9], 5).unwrap();
        assert_eq!(s.basis().ncols(), 1);
    }

    #[test]
    fn history_is_bounded_by_k() {
        let mut s = GesState::new(4);
        for i in 0..6 {
            s.update(&[i as f64, 1.0, (i * i) as f64, -1.0], 3).unwrap();
        }
        assert_eq!(s.history().len(), 3);
        assert_eq!(s.history().front().unwrap()[0], 3.0);
        assert!(s.basis().ncols() <= 3);
        assert!(s.update(&[1.0], 3).is_err());
    }

    proptest! {
        #[test]
        fn basis_stays_orthonormal(updates in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 5), 1..25), k in 1usize..6) {
            let mut s = GesState::new(5);
            for g in &updates {
                s.update(g, k).unwrap();
                prop_assert!(orthonormality_error(s.basis()) < 1e-10);
                prop_assert!(s.history().len() <= k);
            }
        }

        #[test]
        fn covariance_trace_one_and_factorized(
            updates in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 1..8),
            alpha in 0.0f64..=1.0,
        ) {
            let mut s = GesState::new(6);
            for g in &updates {
                s.update(g, 4).unwrap();
            }
            let k = s.basis().ncols();
            prop_assume!(k > 0);
            let cov = ges_covariance(s.basis(), alpha, 6, k).unwrap();
            prop_assert!((cov.sigma.diag().sum() - 1.0).abs() < 1e-10);
            let aat = cov.factor.dot(&cov.factor.t());
            let max_dev = aat.iter().zip(&cov.sigma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_dev < 1e-10);
            let asym = cov.sigma.iter().zip(cov.sigma.t().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(asym < 1e-15);
        }
    }
}

//! End-to-end behaviour of the design loop on small problems.

use rand::Rng as _;
use rand_distr::StandardNormal;

use sagabed::bed::{run_pathwise_baseline, run_saga_bed, BedConfig};
use sagabed::mi::{draw_batch, smile_value};
use sagabed::models::{Domain, GammaNoise, ImplicitModel, LinearModel, PkModel};
use sagabed::rng::Rng;

/// Outcomes are pure noise, so the mutual information is zero at every design.
struct Uninformative {
    domain: Domain,
}

impl ImplicitModel for Uninformative {
    fn name(&self) -> &'static str {
        "uninformative"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn outcome_dim(&self) -> usize {
        2
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn sample_noise_row(&self, rng: &mut Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
    fn sample_prior_row(&self, rng: &mut Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
    fn prior_log_density(&self, theta: &[f64]) -> f64 {
        -0.5 * theta.iter().map(|t| t * t).sum::<f64>()
    }
    fn outcome(&self, _theta: &[f64], design: &[f64], noise: &[f64], out: &mut [f64]) {
        for ((y, xi), e) in out.iter_mut().zip(design).zip(noise) {
            *y = xi + e;
        }
    }
    fn prior_sampling_std(&self) -> Vec<f64> {
        vec![1.0; 2]
    }
}

fn small_config(design_dim: usize, seed: u64) -> BedConfig {
    BedConfig {
        epochs: 200,
        samples: 1000,
        lr_psi: 5e-3,
        lr_xi: 0.0,
        hidden: vec![32],
        seed,
        ..BedConfig::defaults(design_dim)
    }
}

#[test]
fn trained_critic_reports_no_information_when_there_is_none() {
    let model = Uninformative {
        domain: Domain::uniform(2, -1.0, 1.0).unwrap(),
    };
    let cfg = BedConfig {
        lr_xi: 0.01,
        ..small_config(2, 3)
    };
    let outcome = run_saga_bed(&model, &cfg).unwrap();
    let batch = draw_batch(&model, outcome.design.values(), 10_000, 99).unwrap();
    let smile = smile_value(&outcome.critic, &batch, cfg.tau).unwrap();
    assert!(smile.abs() <= 0.2, "held-out SMILE {smile}");
    assert!(outcome.trace.tail_mean(50).abs() <= 0.2);
}

#[test]
fn frozen_design_smile_improves_as_the_critic_trains() {
    let model = LinearModel::new(1, GammaNoise::ShapeScale).unwrap();
    for seed in 0..3 {
        let cfg = BedConfig {
            init_design: Some(vec![7.0]),
            ..small_config(1, seed)
        };
        let outcome = run_saga_bed(&model, &cfg).unwrap();
        assert!(outcome.trace.records.iter().all(|r| r.design == vec![7.0]));
        let values = outcome.trace.smile_values();
        let blocks: Vec<f64> = values.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        // Later blocks differ by batch noise only once the critic has converged.
        for w in blocks.windows(2) {
            assert!(w[1] >= w[0] - 0.02, "seed {seed}: block means {blocks:?}");
        }
        assert!(blocks[blocks.len() - 1] > blocks[0], "seed {seed}: block means {blocks:?}");
    }
}

#[test]
fn pathwise_and_gradient_free_reach_similar_pk_plateaus() {
    let model = PkModel::new(10).unwrap();
    let cfg = BedConfig {
        epochs: 150,
        samples: 1000,
        lr_psi: 2e-2,
        lr_xi: 0.5,
        hidden: vec![64],
        seed: 5,
        ..BedConfig::defaults(10)
    };
    let saga = run_saga_bed(&model, &cfg).unwrap();
    let pathwise = run_pathwise_baseline(&model, &cfg).unwrap();
    let (a, b) = (saga.trace.tail_mean(30), pathwise.trace.tail_mean(30));
    assert!((a - b).abs() <= 0.5, "gradient-free {a} vs pathwise {b}");
}

//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sagabed::bed::BedConfig;
use sagabed::es::EsConfig;
use sagabed::mi::{CriticLoss, DEFAULT_TAU};
use sagabed::models::{GammaNoise, ImplicitModel, LinearModel, PkModel, RabiModel, PK_DOSE};
use sagabed::posterior::MhSettings;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub nmc: NmcConfig,
    #[serde(default)]
    pub posterior: PosteriorConfig,
    pub output: OutputConfig,
    /// Written by `run` into the manifest; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Pk,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    /// Γ(2, 2) read as shape 2, scale 2.
    ShapeScale,
    /// Γ(2, 2) read as shape 2, rate 2.
    ShapeRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of design coordinates (linear, PK) or measurements (quantum).
    pub dim: usize,
    pub theta_true: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaConvention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Saga,
    Pathwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticLossName {
    Smile,
    #[default]
    Js,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub method: Method,
    pub epochs: usize,
    pub samples: usize,
    pub lr_psi: f64,
    pub lr_xi: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub critic_loss: CriticLossName,
    #[serde(default = "default_critic_steps")]
    pub critic_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_design: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<EsSettings>,
}

fn default_critic_steps() -> usize {
    1
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsSettings {
    pub sigma: f64,
    pub num_pairs: usize,
    pub alpha: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmcConfig {
    /// Compute a nested Monte Carlo reference at the final design after `run`.
    pub enabled: bool,
    pub outer: usize,
    pub inner: usize,
}

impl Default for NmcConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            outer: 1000,
            inner: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Mh,
    Categorical,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Mh => "mh",
            SamplerKind::Categorical => "categorical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub sampler: SamplerKind,
    pub chain_len: usize,
    pub burn_in: usize,
    /// Per-coordinate MH proposal sd in the sampling space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<Vec<f64>>,
    /// Prior pool size for categorical resampling.
    pub pool: usize,
    /// Draws taken from the pool.
    pub draws: usize,
    /// Clip level for the posterior weights; the training `tau` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        let mh = MhSettings::default();
        Self {
            sampler: SamplerKind::Mh,
            chain_len: mh.chain_len,
            burn_in: mh.burn_in,
            proposal_scale: None,
            pool: 200_000,
            draws: 10_000,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn build_model(&self) -> Result<Box<dyn ImplicitModel>, CliError> {
        let m = &self.model;
        let model: Box<dyn ImplicitModel> = match m.kind {
            ModelKind::Linear => {
                let gamma = match m.gamma.unwrap_or(GammaConvention::ShapeScale) {
                    GammaConvention::ShapeScale => GammaNoise::ShapeScale,
                    GammaConvention::ShapeRate => GammaNoise::ShapeRate,
                };
                Box::new(LinearModel::new(m.dim, gamma)?)
            }
            ModelKind::Pk => Box::new(PkModel::with_dose(m.dim, m.dose.unwrap_or(PK_DOSE))?),
            ModelKind::Quantum => Box::new(RabiModel::new(m.dim)?),
        };
        Ok(model)
    }

    pub fn bed_config(&self, design_dim: usize) -> BedConfig {
        let o = &self.optimizer;
        let es = match &o.es {
            Some(e) => EsConfig {
                sigma: e.sigma,
                num_pairs: e.num_pairs,
                alpha: e.alpha,
                k: e.k,
            },
            None => EsConfig::defaults_for(design_dim),
        };
        BedConfig {
            epochs: o.epochs,
            samples: o.samples,
            lr_psi: o.lr_psi,
            lr_xi: o.lr_xi,
            tau: o.tau,
            critic_loss: match o.critic_loss {
                CriticLossName::Smile => CriticLoss::Smile,
                CriticLossName::Js => CriticLoss::Js,
            },
            critic_steps: o.critic_steps,
            es,
            hidden: o.hidden.clone(),
            seed: self.seed,
            init_design: o.init_design.clone(),
        }
    }

    pub fn mh_settings(&self) -> MhSettings {
        MhSettings {
            chain_len: self.posterior.chain_len,
            burn_in: self.posterior.burn_in,
            proposal_scale: self.posterior.proposal_scale.clone(),
        }
    }

    pub fn posterior_tau(&self) -> f64 {
        self.posterior.tau.unwrap_or(self.optimizer.tau)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.build_model()?;
        if self.model.kind != ModelKind::Linear && self.model.gamma.is_some() {
            return Err(CliError::Config("model.gamma only applies to the linear model".into()));
        }
        if self.model.kind != ModelKind::Pk && self.model.dose.is_some() {
            return Err(CliError::Config("model.dose only applies to the PK model".into()));
        }
        if self.model.theta_true.len() != model.theta_dim() {
            return Err(CliError::Config(format!(
                "model.theta_true has {} entries, {} expects {}",
                self.model.theta_true.len(),
                model.name(),
                model.theta_dim()
            )));
        }
        model
            .check_theta(&self.model.theta_true)
            .map_err(|e| CliError::Config(format!("model.theta_true: {e}")))?;
        self.bed_config(model.design_dim())
            .validate()
            .map_err(|e| CliError::Config(format!("optimizer: {e}")))?;
        if let Some(init) = &self.optimizer.init_design {
            model
                .domain()
                .check(init)
                .map_err(|e| CliError::Config(format!("optimizer.init_design: {e}")))?;
        }
        if self.nmc.enabled && self.model.kind != ModelKind::Linear {
            return Err(CliError::Unsupported(format!(
                "nested Monte Carlo reference needs a likelihood; model `{}` has none",
                model.name()
            )));
        }
        if self.nmc.outer == 0 || self.nmc.inner == 0 {
            return Err(CliError::Config("nmc.outer and nmc.inner must be at least 1".into()));
        }
        let p = &self.posterior;
        if p.chain_len <= p.burn_in {
            return Err(CliError::Config(format!(
                "posterior.chain_len ({}) must exceed posterior.burn_in ({})",
                p.chain_len, p.burn_in
            )));
        }
        if p.pool == 0 || p.draws < 2 {
            return Err(CliError::Config("posterior.pool must be positive and posterior.draws at least 2".into()));
        }
        if let Some(s) = &p.proposal_scale {
            if s.len() != model.theta_dim() || s.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::Config(format!(
                    "posterior.proposal_scale needs {} positive entries",
                    model.theta_dim()
                )));
            }
        }
        if !(self.posterior_tau() > 0.0) {
            return Err(CliError::Config("posterior.tau must be positive".into()));
        }
        Ok(())
    }
}

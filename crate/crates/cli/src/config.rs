//! TOML run configuration. Every section is optional except `[problem]`;
//! omitted fields take the problem's defaults.

use std::path::{Path, PathBuf};

use pinn_core::optim::{AdamConfig, LbfgsConfig, OptimizerKind};
use pinn_core::problems::{ProblemSpec, ShmParams, WaveParams};
use pinn_core::sampling::Scheme;
use pinn_core::trainer::{Init, OptimizerChoice, TrainConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Shm,
    Wave,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: Option<ProblemKind>,
    /// omega_0 for `shm`, c for `wave`.
    pub constant: Option<f64>,
    pub mass: Option<f64>,
    pub friction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub layer_dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: Option<OptimizerKind>,
    /// Hybrid split; both default to half of `max_epochs`.
    pub adam_epochs: Option<usize>,
    pub lbfgs_epochs: Option<usize>,
    pub adam: Option<AdamConfig>,
    /// `initial_step` is the first trial step of each line search (the
    /// "learning rate" of L-BFGS).
    pub lbfgs: Option<LbfgsConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_interior: Option<usize>,
    pub n_spatial_boundary: Option<usize>,
    pub n_temporal_boundary: Option<usize>,
    pub scheme: Option<Scheme>,
    pub skip: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub w_f: Option<f64>,
    pub w_i: Option<f64>,
    pub w_b: Option<f64>,
    /// C_t of the decaying initial-condition weight; 0 disables it.
    pub temporal_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub max_epochs: Option<usize>,
    pub target_loss: Option<f64>,
    pub seed: Option<u64>,
    pub l2_every: Option<usize>,
    /// Write real wall-clock times into the metrics CSV (breaks byte-identical reruns).
    pub wall_time_in_metrics: Option<bool>,
    pub init_checkpoint: Option<PathBuf>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub optimizer: Option<OptimizerKind>,
    pub max_epochs: Option<usize>,
    pub target_loss: Option<f64>,
    pub base_checkpoint: Option<PathBuf>,
}

/// A resolved configuration plus output options not part of training.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub wall_time_in_metrics: bool,
}

pub const DEFAULT_MAX_EPOCHS: usize = 10_000;

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn problem(&self) -> Result<ProblemSpec, ConfigError> {
        let p = &self.problem;
        let kind = p.kind.ok_or_else(|| ConfigError::Invalid("[problem] kind is required".into()))?;
        let constant = p
            .constant
            .ok_or_else(|| ConfigError::Invalid("[problem] constant is required".into()))?;
        let invalid = |e: pinn_core::problems::ProblemError| ConfigError::Invalid(format!("[problem] {e}"));
        match kind {
            ProblemKind::Shm => {
                let base = ShmParams::from_omega0(constant).map_err(invalid)?;
                let mass = p.mass.unwrap_or(base.mass);
                let friction = p.friction.unwrap_or(base.friction);
                Ok(ProblemSpec::Shm(
                    ShmParams::new(mass, friction, mass * constant * constant, base.t_max).map_err(invalid)?,
                ))
            }
            ProblemKind::Wave => {
                if p.mass.is_some() || p.friction.is_some() {
                    return Err(ConfigError::Invalid("[problem] mass and friction apply only to shm".into()));
                }
                Ok(ProblemSpec::Wave(WaveParams::new(constant).map_err(invalid)?))
            }
        }
    }

    pub fn resolve(&self, overrides: &Overrides) -> Result<ResolvedConfig, ConfigError> {
        let problem = self.problem()?;
        let run = &self.run;
        let max_epochs = overrides.max_epochs.or(run.max_epochs).unwrap_or(DEFAULT_MAX_EPOCHS);
        let opt = &self.optimizer;
        let kind = overrides.optimizer.or(opt.kind).unwrap_or(OptimizerKind::Lbfgs);
        let adam = opt.adam.unwrap_or_default();
        let lbfgs = opt.lbfgs.unwrap_or_default();
        let optimizer = match kind {
            OptimizerKind::Adam => OptimizerChoice::Adam(adam),
            OptimizerKind::Lbfgs => OptimizerChoice::Lbfgs(lbfgs),
            OptimizerKind::Hybrid => {
                let adam_epochs = opt.adam_epochs.unwrap_or(max_epochs / 2);
                OptimizerChoice::Hybrid {
                    adam_epochs,
                    lbfgs_epochs: opt.lbfgs_epochs.unwrap_or(max_epochs.saturating_sub(adam_epochs)),
                    adam,
                    lbfgs,
                }
            }
        };
        let mut train = TrainConfig::new(problem, optimizer, max_epochs);
        if let Some(dims) = &self.network.layer_dims {
            train.layer_dims = dims.clone();
        }
        let s = &self.sampling;
        train.plan.n_interior = s.n_interior.unwrap_or(train.plan.n_interior);
        train.plan.n_spatial_boundary = s.n_spatial_boundary.unwrap_or(train.plan.n_spatial_boundary);
        train.plan.n_temporal_boundary = s.n_temporal_boundary.unwrap_or(train.plan.n_temporal_boundary);
        train.plan.scheme = s.scheme.unwrap_or(train.plan.scheme);
        train.plan.skip = s.skip.unwrap_or(train.plan.skip);
        let l = &self.loss;
        train.weights.w_f = l.w_f.unwrap_or(train.weights.w_f);
        train.weights.w_i = l.w_i.unwrap_or(train.weights.w_i);
        train.weights.w_b = l.w_b.unwrap_or(train.weights.w_b);
        match l.temporal_decay {
            Some(c) if c == 0.0 => train.weights.temporal_decay = None,
            Some(c) => train.weights.temporal_decay = Some(c),
            None => {}
        }
        train.target_loss = overrides.target_loss.or(run.target_loss).unwrap_or(train.target_loss);
        train.seed = overrides.seed.or(run.seed).unwrap_or(0);
        train.l2_every = run.l2_every.unwrap_or(train.l2_every);
        if let Some(path) = overrides.base_checkpoint.clone().or_else(|| run.init_checkpoint.clone()) {
            train.init = Init::FromCheckpoint(path);
        }
        train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ResolvedConfig {
            train,
            wall_time_in_metrics: run.wall_time_in_metrics.unwrap_or(false),
        })
    }
}

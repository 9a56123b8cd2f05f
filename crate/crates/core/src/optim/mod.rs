//! First- and quasi-second-order optimizers over flat parameter vectors.

mod adam;
mod lbfgs;

pub use adam::{Adam, AdamConfig};
pub use lbfgs::{DenseBfgs, Lbfgs, LbfgsConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient component at index {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite objective value {0}")]
    NonFiniteLoss(f64),
    #[error("parameter and gradient lengths differ ({params} vs {grad})")]
    LengthMismatch { params: usize, grad: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error("objective evaluation failed: {0}")]
    Objective(String),
}

/// A differentiable objective. `evaluate` writes the gradient at `x` into
/// `grad` and returns the objective value.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64, OptimError>,
{
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, OptimError> {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Lbfgs,
    Hybrid,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "lbfgs" | "l-bfgs" => Ok(OptimizerKind::Lbfgs),
            "hybrid" => Ok(OptimizerKind::Hybrid),
            other => Err(OptimError::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss_before: f64,
    /// Objective at the new parameters when the step evaluated it.
    pub loss_after: Option<f64>,
    pub grad_norm: f64,
    pub step_size: f64,
    pub accepted: bool,
}

pub(crate) fn check_finite(grad: &[f64]) -> Result<(), OptimError> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(OptimError::NonFiniteGradient(i)),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

//! Physics-informed neural network training engine.
//!
//! Small dense tanh networks are trained to solve the damped harmonic
//! oscillator and the 1D wave equation by minimizing residual losses, with
//! warm starts from lower-frequency solutions (transfer learning).

pub mod autodiff;
pub mod network;
pub mod problems;
pub mod sampling;
pub mod optim;
pub mod trainer;

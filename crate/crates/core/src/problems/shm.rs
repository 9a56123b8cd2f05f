use serde::{Deserialize, Serialize};

use super::ProblemError;
use crate::autodiff::Jet2;

/// Damped harmonic oscillator `m u'' + mu u' + k u = 0` with `u(0) = 1`,
/// `u'(0) = 0`, restricted to the under-damped regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShmParams {
    pub mass: f64,
    pub friction: f64,
    pub stiffness: f64,
    /// End of the time domain `[0, t_max]`.
    pub t_max: f64,
}

impl ShmParams {
    pub fn new(mass: f64, friction: f64, stiffness: f64, t_max: f64) -> Result<Self, ProblemError> {
        let p = Self {
            mass,
            friction,
            stiffness,
            t_max,
        };
        if !(mass > 0.0 && friction >= 0.0 && stiffness > 0.0 && t_max > 0.0) || !(p.delta() < p.omega0()) {
            return Err(ProblemError::NotUnderdamped {
                delta: p.delta(),
                omega0: p.omega0(),
            });
        }
        Ok(p)
    }

    /// Unit mass, friction 4 (so delta = 2), stiffness omega_0^2, on `[0, 1]`.
    pub fn from_omega0(omega0: f64) -> Result<Self, ProblemError> {
        Self::new(1.0, 4.0, omega0 * omega0, 1.0)
    }

    pub fn delta(&self) -> f64 {
        self.friction / (2.0 * self.mass)
    }

    pub fn omega0(&self) -> f64 {
        (self.stiffness / self.mass).sqrt()
    }

    /// Damped angular frequency.
    pub fn omega(&self) -> f64 {
        let w0 = self.omega0();
        let d = self.delta();
        (w0 * w0 - d * d).sqrt()
    }

    /// Phase fixed by `u'(0) = 0`: `tan(phi) = -delta / omega`.
    pub fn phase(&self) -> f64 {
        (-self.delta() / self.omega()).atan()
    }

    /// Amplitude fixed by `u(0) = 1`: `2 A cos(phi) = 1`.
    pub fn amplitude(&self) -> f64 {
        0.5 / self.phase().cos()
    }

    pub fn exact(&self, t: f64) -> f64 {
        (-self.delta() * t).exp() * 2.0 * self.amplitude() * (self.phase() + self.omega() * t).cos()
    }

    /// Exact solution with its first two time derivatives.
    pub fn exact_jet(&self, t: f64) -> Jet2 {
        let t = Jet2::seed(t);
        let decay = t.scale(-self.delta()).exp();
        let wave = (t.scale(self.omega()) + Jet2::constant(self.phase())).cos();
        (decay * wave).scale(2.0 * self.amplitude())
    }

    /// `m u'' + mu u' + k u` for a jet along t.
    pub fn residual(&self, u: Jet2) -> f64 {
        self.mass * u.d2 + self.friction * u.d1 + self.stiffness * u.val
    }
}

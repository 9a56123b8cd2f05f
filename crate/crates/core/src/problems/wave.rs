use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ProblemError;

/// `u_tt = c^2 u_xx` on `x in [0, pi]`, `t in [0, 2 pi]` with
/// `u(x, 0) = sin x`, `u_t(x, 0) = sin x` and `u(0, t) = u(pi, t) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub c: f64,
    pub x_max: f64,
    pub t_max: f64,
}

impl WaveParams {
    pub fn new(c: f64) -> Result<Self, ProblemError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ProblemError::InvalidVelocity(c));
        }
        Ok(Self {
            c,
            x_max: PI,
            t_max: 2.0 * PI,
        })
    }

    /// `sin x (cos ct + sin(ct) / c)`; reduces to `sin x (sin t + cos t)` at c = 1.
    pub fn exact(&self, x: f64, t: f64) -> f64 {
        let ct = self.c * t;
        x.sin() * (ct.cos() + ct.sin() / self.c)
    }

    pub fn initial_value(&self, x: f64) -> f64 {
        x.sin()
    }

    pub fn initial_rate(&self, x: f64) -> f64 {
        x.sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_velocity_peak() {
        let p = WaveParams::new(1.0).unwrap();
        assert!((p.exact(PI / 2.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((p.exact(0.3, 1.1) - 0.3f64.sin() * (1.1f64.sin() + 1.1f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn boundaries_vanish() {
        for c in [1.0, 1.5, 2.0, 4.0] {
            let p = WaveParams::new(c).unwrap();
            for t in [0.0, 0.7, 3.0, 2.0 * PI] {
                assert_eq!(p.exact(0.0, t), 0.0);
                assert!(p.exact(PI, t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn invalid_velocity() {
        assert!(WaveParams::new(0.0).is_err());
        assert!(WaveParams::new(-1.0).is_err());
        assert!(WaveParams::new(f64::NAN).is_err());
    }
}

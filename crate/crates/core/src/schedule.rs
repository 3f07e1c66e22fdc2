//! Variance-exploding noise schedule, σ(t) = t.
//!
//! Time and noise level coincide, so the forward perturbation at time t is
//! `x + t·ε` and the diffusion coefficient is g²(t) = d(σ²)/dt = 2t. The
//! sampler integrates backward from `t_max` down to `sigma_min` (never to
//! exactly zero, where the score blows up).

use crate::tensor::TensorError;

/// Noise schedule parameters. Defaults: horizon 80, floor 0.01.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// Integration horizon T; also the largest noise level.
    pub t_max: f64,
    /// Smallest usable noise level.
    pub sigma_min: f64,
    /// Exponent of the step-spacing grid used by the ODE sampler.
    pub rho: f64,
}

impl Default for NoiseSchedule {
    fn default() -> NoiseSchedule {
        NoiseSchedule { t_max: 80.0, sigma_min: 0.01, rho: 7.0 }
    }
}

impl NoiseSchedule {
    pub fn new(t_max: f64, sigma_min: f64) -> Result<NoiseSchedule, TensorError> {
        if !(t_max.is_finite() && sigma_min.is_finite()) || sigma_min <= 0.0 || t_max <= sigma_min {
            return Err(TensorError::Invalid {
                op: "noise_schedule",
                msg: format!("need 0 < sigma_min < t_max, got sigma_min={sigma_min}, t_max={t_max}"),
            });
        }
        Ok(NoiseSchedule { t_max, sigma_min, rho: 7.0 })
    }

    /// Noise level at time t (identity for this schedule).
    pub fn sigma(&self, t: f64) -> f64 {
        t
    }

    /// Squared diffusion coefficient g²(t) = d(σ²)/dt = 2t.
    pub fn g_squared(&self, t: f64) -> f64 {
        2.0 * t
    }

    /// True when σ lies in the usable band [sigma_min, t_max].
    pub fn contains(&self, sigma: f64) -> bool {
        sigma >= self.sigma_min && sigma <= self.t_max
    }

    /// Descending noise-level grid from `t_max` to `sigma_min` with the
    /// usual ρ-warped spacing (dense near the floor). `steps` counts grid
    /// points and must be at least 2.
    pub fn sampling_grid(&self, steps: usize) -> Result<Vec<f64>, TensorError> {
        if steps < 2 {
            return Err(TensorError::Invalid {
                op: "sampling_grid",
                msg: format!("need at least 2 steps, got {steps}"),
            });
        }
        let inv_rho = 1.0 / self.rho;
        let hi = self.t_max.powf(inv_rho);
        let lo = self.sigma_min.powf(inv_rho);
        let grid = (0..steps)
            .map(|i| {
                let frac = i as f64 / (steps - 1) as f64;
                (hi + frac * (lo - hi)).powf(self.rho)
            })
            .collect();
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_squared_matches_derivative_of_sigma_squared() {
        let sched = NoiseSchedule::default();
        let h = 1e-6;
        for &t in &[0.05, 0.5, 3.0, 40.0, 79.0] {
            let fd = ((t + h) * (t + h) - (t - h) * (t - h)) / (2.0 * h);
            assert!((sched.g_squared(t) - fd).abs() < 1e-6, "t={t}");
            assert_eq!(sched.sigma(t), t);
        }
    }

    #[test]
    fn grid_spans_schedule_and_descends() {
        let sched = NoiseSchedule::default();
        let grid = sched.sampling_grid(64).unwrap();
        assert_eq!(grid.len(), 64);
        assert!((grid[0] - 80.0).abs() < 1e-9);
        assert!((grid[63] - 0.01).abs() < 1e-12);
        for w in grid.windows(2) {
            assert!(w[1] < w[0], "grid must strictly descend");
        }
    }

    #[test]
    fn grid_needs_two_points() {
        let sched = NoiseSchedule::default();
        assert!(sched.sampling_grid(1).is_err());
        assert!(sched.sampling_grid(2).is_ok());
    }

    #[test]
    fn constructor_validates_band() {
        assert!(NoiseSchedule::new(80.0, 0.0).is_err());
        assert!(NoiseSchedule::new(0.005, 0.01).is_err());
        assert!(NoiseSchedule::new(80.0, 0.01).is_ok());
    }
}

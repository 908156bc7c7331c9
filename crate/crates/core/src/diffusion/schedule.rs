use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masking schedule `σ(t) = sin(π t / 2T)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub horizon: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self { horizon: 1.0 }
    }
}

impl DiffusionSchedule {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { horizon })
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        sigma(t, self.horizon)
    }

    /// Time at step `k` of an `S`-step reverse grid: `T (S - k) / S`.
    pub fn grid_time(&self, k: usize, steps: usize) -> f64 {
        self.horizon * (steps - k) as f64 / steps as f64
    }
}

pub fn sigma(t: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon {horizon} must be positive")));
    }
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, {horizon}]")));
    }
    Ok((0.5 * std::f64::consts::PI * t / horizon).sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(sigma(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(sigma(1.0, 1.0).unwrap(), 1.0);
        assert!((sigma(0.5, 1.0).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((sigma(2.0 / 3.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(sigma(-1e-9, 1.0).is_err());
        assert!(sigma(1.0 + 1e-9, 1.0).is_err());
        assert!(sigma(0.5, 0.0).is_err());
    }

    #[test]
    fn grid() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.grid_time(0, 4), 1.0);
        assert_eq!(s.grid_time(4, 4), 0.0);
        assert_eq!(s.grid_time(1, 4), 0.75);
    }
}

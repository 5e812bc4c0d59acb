//! Parallel-form PI controller `Kp + Ki/s`, discretized with backward Euler.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self { kp: 0.12, ki: 0.07 }
    }
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.kp.is_finite(), "controller.kp", "must be finite")?;
        ensure(self.ki.is_finite(), "controller.ki", "must be finite")
    }
}

/// Integrator plus the last measurement the controller actually received.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub integral_accum: f64,
    pub last_input: f64,
}

impl PiState {
    /// One control period: `integral += e·Ts`, then `u = kp·e + ki·integral`.
    ///
    /// No saturation and no anti-windup.
    pub fn step(&mut self, gains: &PiGains, e: f64, ts: f64) -> f64 {
        self.integral_accum += e * ts;
        gains.kp * e + gains.ki * self.integral_accum
    }
}

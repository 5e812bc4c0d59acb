//! First-order-plus-dead-time plant `K·e^{-Ls}/(Ts+1)`.
//!
//! The lag is integrated with classical RK4 at the engine tick. The dead
//! time is an exact ring buffer of past inputs, one slot per tick, so `L`
//! has to be an integer multiple of the tick.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, is_multiple_of, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    #[serde(rename = "K")]
    pub gain: f64,
    #[serde(rename = "T")]
    pub time_constant: f64,
    #[serde(rename = "L")]
    pub dead_time: f64,
}

impl Default for PlantParams {
    /// The balanced lag/delay test process `5/(1.5s+1)·e^{-s}`.
    fn default() -> Self {
        Self {
            gain: 5.0,
            time_constant: 1.5,
            dead_time: 1.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.gain.is_finite(), "plant.K", "must be finite")?;
        ensure(
            self.time_constant.is_finite() && self.time_constant > 0.0,
            "plant.T",
            "must be finite and > 0",
        )?;
        ensure(
            self.dead_time.is_finite() && self.dead_time >= 0.0,
            "plant.L",
            "must be finite and >= 0",
        )
    }

    /// Checks that the dead time fits the tick grid of the delay line.
    pub fn validate_for_tick(&self, tick: f64) -> Result<(), ConfigError> {
        self.validate()?;
        ensure(
            is_multiple_of(self.dead_time, tick),
            "plant.L",
            format!("dead time {} is not an integer multiple of the tick {tick}", self.dead_time),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PlantError {
    #[error("non-finite plant input {0}")]
    NonFiniteInput(f64),
}

/// Integrator state plus the dead-time delay line.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    params: PlantParams,
    x: f64,
    delay_line: VecDeque<f64>,
    t: f64,
}

impl PlantState {
    /// A plant at rest (zero output, zero input history) for the given tick.
    pub fn new(params: PlantParams, tick: f64) -> Self {
        let slots = (params.dead_time / tick).round() as usize;
        Self {
            params,
            x: 0.0,
            delay_line: std::iter::repeat_n(0.0, slots).collect(),
            t: 0.0,
        }
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn output(&self) -> f64 {
        self.x
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn delay_slots(&self) -> usize {
        self.delay_line.len()
    }

    /// Advances one tick of length `dt` with `u` held over the step.
    ///
    /// `u` enters the delay line; the input that left it `L` seconds ago
    /// drives the lag.
    pub fn step(&mut self, u: f64, dt: f64) -> Result<(), PlantError> {
        if !u.is_finite() {
            return Err(PlantError::NonFiniteInput(u));
        }
        let delayed = match self.delay_line.pop_front() {
            Some(old) => {
                self.delay_line.push_back(u);
                old
            }
            None => u,
        };
        let PlantParams {
            gain,
            time_constant,
            ..
        } = self.params;
        let f = |x: f64| (gain * delayed - x) / time_constant;
        let k1 = f(self.x);
        let k2 = f(self.x + 0.5 * dt * k1);
        let k3 = f(self.x + 0.5 * dt * k2);
        let k4 = f(self.x + dt * k3);
        self.x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        self.t += dt;
        Ok(())
    }
}

/// Closed-form unit-step response: `0` up to `L`, then `K(1 - e^{-(t-L)/T})`.
pub fn foptd_step_analytic(params: &PlantParams, t: f64) -> f64 {
    if t <= params.dead_time {
        0.0
    } else {
        params.gain * (1.0 - (-(t - params.dead_time) / params.time_constant).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TICK: f64 = 0.01;

    fn step_response(params: PlantParams, amplitude: f64, ticks: usize) -> Vec<f64> {
        let mut plant = PlantState::new(params, TICK);
        let mut out = vec![plant.output()];
        for _ in 0..ticks {
            plant.step(amplitude, TICK).unwrap();
            out.push(plant.output());
        }
        out
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let out = step_response(PlantParams::default(), 0.0, 5000);
        assert!(out.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn dead_time_is_exact() {
        let out = step_response(PlantParams::default(), 1.0, 200);
        // 100 ticks of dead time: output is untouched through tick 100.
        assert!(out[..=100].iter().all(|&y| y == 0.0));
        assert!(out[101] > 0.0);
    }

    #[test]
    fn output_at_one_time_constant_past_dead_time() {
        let out = step_response(PlantParams::default(), 1.0, 250);
        assert!((out[250] - 3.160_602_794_142_788).abs() <= 1e-6, "{}", out[250]);
    }

    #[test]
    fn analytic_oracle_values() {
        let p = PlantParams::default();
        assert_eq!(foptd_step_analytic(&p, 0.0), 0.0);
        assert_eq!(foptd_step_analytic(&p, 1.0), 0.0);
        assert!((foptd_step_analytic(&p, 1.0e4) - 5.0).abs() < 1e-12);
        let half = 1.0 + 1.5 * std::f64::consts::LN_2;
        assert!((foptd_step_analytic(&p, half) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rk4_tracks_analytic_over_twenty_seconds() {
        let p = PlantParams::default();
        let out = step_response(p, 1.0, 2000);
        let worst = out
            .iter()
            .enumerate()
            .map(|(i, y)| (y - foptd_step_analytic(&p, i as f64 * TICK)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "max error {worst}");
    }

    #[test]
    fn zero_dead_time_has_no_delay_line() {
        let p = PlantParams {
            dead_time: 0.0,
            ..PlantParams::default()
        };
        let mut plant = PlantState::new(p, TICK);
        assert_eq!(plant.delay_slots(), 0);
        plant.step(1.0, TICK).unwrap();
        assert!(plant.output() > 0.0);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut plant = PlantState::new(PlantParams::default(), TICK);
        assert!(plant.step(f64::NAN, TICK).is_err());
    }

    #[test]
    fn validation() {
        assert!(PlantParams::default().validate_for_tick(TICK).is_ok());
        let bad_t = PlantParams {
            time_constant: 0.0,
            ..PlantParams::default()
        };
        assert_eq!(bad_t.validate().unwrap_err().field, "plant.T");
        let off_grid = PlantParams {
            dead_time: 1.005,
            ..PlantParams::default()
        };
        assert_eq!(off_grid.validate_for_tick(TICK).unwrap_err().field, "plant.L");
    }

    proptest! {
        #[test]
        fn response_is_linear_in_input(alpha in -50.0f64..50.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = PlantParams::default();
            let mut base = PlantState::new(p, TICK);
            let mut scaled = PlantState::new(p, TICK);
            let mut peak = 0.0f64;
            for &u in &inputs {
                base.step(u, TICK).unwrap();
                scaled.step(alpha * u, TICK).unwrap();
                peak = peak.max(base.output().abs());
                let expected = alpha * base.output();
                // roundoff is relative to the signal scale, not the instantaneous value
                prop_assert!((scaled.output() - expected).abs() <= 1e-12 * alpha.abs() * peak);
            }
        }
    }
}

//! Weighted ITAE + ISCO cost of a closed-loop trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::sim::{LoopRun, Trace};

/// Cost assigned per second of horizon remaining after a blow-up.
pub const DIVERGENCE_PENALTY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    /// ITAE weight.
    pub w1: f64,
    /// ISCO weight.
    pub w2: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.w1.is_finite() && self.w1 >= 0.0, "objective.w1", "must be finite and >= 0")?;
        ensure(self.w2.is_finite() && self.w2 >= 0.0, "objective.w2", "must be finite and >= 0")?;
        ensure(self.w1 + self.w2 > 0.0, "objective", "w1 + w2 must be > 0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("cannot score an empty trace")]
    EmptyTrace,
}

/// `Σ [w1·t_k·|e_k| + w2·u_k²]·Ts` over the left endpoints of the horizon
/// (every row but the last).
pub fn objective(trace: &Trace, w: &ObjectiveWeights) -> Result<f64, ObjectiveError> {
    let (_, intervals) = trace.rows.split_last().ok_or(ObjectiveError::EmptyTrace)?;
    let sum: f64 = intervals
        .iter()
        .map(|r| w.w1 * r.t * r.e.abs() + w.w2 * r.u * r.u)
        .sum();
    let j = sum * trace.ts;
    // finite signals can still overflow the square
    Ok(if j.is_finite() { j } else { f64::MAX })
}

/// `1e12·(1 + horizon − t_diverged)`: earlier blow-ups cost more.
pub fn divergence_penalty(horizon: f64, t_diverged: f64) -> f64 {
    DIVERGENCE_PENALTY * (1.0 + horizon - t_diverged)
}

/// Scores a run, substituting the divergence penalty for unstable loops.
pub fn score_run(run: &LoopRun, horizon: f64, w: &ObjectiveWeights) -> Result<f64, ObjectiveError> {
    match run.divergence {
        Some(d) => Ok(divergence_penalty(horizon, d.t)),
        None => objective(&run.trace, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_trace(horizon: f64, ts: f64, e: f64, u: f64) -> Trace {
        let n = (horizon / ts).round() as usize;
        let mut tr = Trace::new(ts);
        for k in 0..=n {
            tr.push(k as f64 * ts, e, 0.0, u);
        }
        tr
    }

    #[test]
    fn zero_signals_cost_nothing() {
        let tr = constant_trace(10.0, 0.1, 0.0, 0.0);
        assert_eq!(objective(&tr, &ObjectiveWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn unit_error_integrates_time() {
        let (th, ts) = (30.0, 0.1);
        let tr = constant_trace(th, ts, 1.0, 0.0);
        let j = objective(&tr, &ObjectiveWeights { w1: 1.0, w2: 0.0 }).unwrap();
        // left rule: Ts²·N(N−1)/2 = th²/2 − th·Ts/2
        assert!((j - (th * th / 2.0 - th * ts / 2.0)).abs() < 1e-9, "{j}");
        assert!((j - th * th / 2.0).abs() <= th * ts);
    }

    #[test]
    fn constant_control_effort() {
        let tr = constant_trace(10.0, 0.1, 0.0, 2.0);
        let j = objective(&tr, &ObjectiveWeights { w1: 0.0, w2: 1.0 }).unwrap();
        assert!((j - 40.0).abs() < 1e-9, "{j}");
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert_eq!(
            objective(&Trace::new(0.1), &ObjectiveWeights::default()),
            Err(ObjectiveError::EmptyTrace)
        );
    }

    #[test]
    fn penalty_grows_with_earlier_divergence() {
        assert_eq!(divergence_penalty(30.0, 30.0), 1e12);
        assert!(divergence_penalty(30.0, 1.0) > divergence_penalty(30.0, 20.0));
    }

    #[test]
    fn weights_validation() {
        assert!(ObjectiveWeights { w1: 0.0, w2: 0.0 }.validate().is_err());
        assert!(ObjectiveWeights { w1: -1.0, w2: 1.0 }.validate().is_err());
        assert!(ObjectiveWeights { w1: 0.0, w2: 1.0 }.validate().is_ok());
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..80).prop_map(|rows| {
            let mut tr = Trace::new(0.1);
            for (k, (e, u)) in rows.into_iter().enumerate() {
                tr.push(k as f64 * 0.1, e, 0.0, u);
            }
            tr
        })
    }

    fn scaled(tr: &Trace, a: f64, b: f64) -> Trace {
        let mut out = Trace::new(tr.ts);
        for r in &tr.rows {
            out.push(r.t, a * r.e, 0.0, b * r.u);
        }
        out
    }

    proptest! {
        #[test]
        fn scaling_law(tr in arb_trace(), alpha in 0.01f64..10.0) {
            let itae = objective(&tr, &ObjectiveWeights { w1: 1.0, w2: 0.0 }).unwrap();
            let isco = objective(&tr, &ObjectiveWeights { w1: 0.0, w2: 1.0 }).unwrap();
            let w = ObjectiveWeights { w1: 0.7, w2: 1.3 };
            let j = objective(&scaled(&tr, alpha, alpha), &w).unwrap();
            let want = 0.7 * alpha * itae + 1.3 * alpha * alpha * isco;
            prop_assert!((j - want).abs() <= 1e-9 * want.max(1.0));
        }

        #[test]
        fn monotone_in_magnitudes(tr in arb_trace(), grow_e in 1.0f64..3.0, grow_u in 1.0f64..3.0) {
            let w = ObjectiveWeights::default();
            let j = objective(&tr, &w).unwrap();
            let j2 = objective(&scaled(&tr, grow_e, grow_u), &w).unwrap();
            prop_assert!(j2 >= j);
            prop_assert!(j >= 0.0);
        }

        #[test]
        fn zero_only_for_zero_signals(tr in arb_trace()) {
            let j = objective(&tr, &ObjectiveWeights::default()).unwrap();
            let (_, head) = tr.rows.split_last().unwrap();
            let all_zero = head.iter().all(|r| r.u == 0.0 && (r.e == 0.0 || r.t == 0.0));
            prop_assert_eq!(j == 0.0, all_zero);
        }
    }
}

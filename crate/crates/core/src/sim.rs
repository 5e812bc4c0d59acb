//! Fixed-step hybrid loop: continuous plant at the tick, sampled PI
//! controller at the control period, two impaired links in between.
//!
//! Schedule of control instant `k` (time `t_k = k·Ts`):
//!
//! 1. the controller and the actuator each consult their link's order
//!    filter once, holding the previous value when nothing fresh arrived;
//! 2. the plant output `y_k` is sampled and the controller computes `u_k`
//!    from the held measurement;
//! 3. `y_k` enters the sensor link and `u_k` the actuator link;
//! 4. the plant integrates `tick_divisor` ticks with the held actuator
//!    value while both links release due packets into their filters.
//!
//! A packet sent at instant `k` is therefore never usable before `k+1`,
//! which is the transport latency [`run_direct_loop`] reproduces.

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, ChannelConfig, ChannelId, Packet, PacketEvent};
use crate::controller::{PiGains, PiState};
use crate::error::{ensure, is_multiple_of, ConfigError};
use crate::plant::{PlantParams, PlantState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Control period in seconds.
    #[serde(rename = "Ts")]
    pub control_period: f64,
    /// Engine ticks per control period.
    pub tick_divisor: u32,
    pub horizon: f64,
    pub setpoint: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_period: 0.1,
            tick_divisor: 10,
            horizon: 30.0,
            setpoint: 1.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn tick(&self) -> f64 {
        self.control_period / self.tick_divisor as f64
    }

    /// Number of control periods in the horizon; the trace has one more row.
    pub fn periods(&self) -> u64 {
        (self.horizon / self.control_period).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ts = self.control_period;
        ensure(ts.is_finite() && ts > 0.0, "sim.Ts", "must be finite and > 0")?;
        ensure(self.tick_divisor >= 1, "sim.tick_divisor", "must be >= 1")?;
        ensure(
            self.horizon.is_finite() && self.horizon >= ts,
            "sim.horizon",
            "must be finite and >= Ts",
        )?;
        ensure(
            is_multiple_of(self.horizon, ts),
            "sim.horizon",
            format!("{} is not an integer multiple of Ts = {ts}", self.horizon),
        )?;
        ensure(self.setpoint.is_finite(), "sim.setpoint", "must be finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    pub e: f64,
}

/// Loop signals sampled once per control period.
///
/// `u` is the controller output computed at `t`; `e = r - y` uses the true
/// plant output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub ts: f64,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(ts: f64) -> Self {
        Self { ts, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, t: f64, r: f64, y: f64, u: f64) {
        self.rows.push(TraceRow { t, r, y, u, e: r - y });
    }

    /// Mean of `y` over the last `fraction` of the rows.
    pub fn tail_mean_y(&self, fraction: f64) -> f64 {
        let n = ((self.rows.len() as f64 * fraction).round() as usize).clamp(1, self.rows.len());
        self.rows[self.rows.len() - n..].iter().map(|r| r.y).sum::<f64>() / n as f64
    }
}

/// Per-packet network events of both links, ordered by `(seq, channel)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub rows: Vec<PacketEvent>,
}

impl EventLog {
    pub fn from_channels(channels: impl IntoIterator<Item = Vec<PacketEvent>>) -> Self {
        let mut rows: Vec<PacketEvent> = channels.into_iter().flatten().collect();
        rows.sort_by_key(|e| (e.seq, e.channel));
        Self { rows }
    }

    pub fn channel(&self, id: ChannelId) -> impl Iterator<Item = &PacketEvent> {
        self.rows.iter().filter(move |e| e.channel == id)
    }

    pub fn drop_fraction(&self, id: ChannelId) -> f64 {
        let (n, dropped) = self
            .channel(id)
            .fold((0usize, 0usize), |(n, d), e| (n + 1, d + e.dropped as usize));
        dropped as f64 / n.max(1) as f64
    }
}

/// Where a run blew up. The trace stops before the first non-finite row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRun {
    pub trace: Trace,
    pub events: EventLog,
    pub divergence: Option<Divergence>,
    /// Stamps of the sensor packets the controller consumed, in order.
    pub consumed_stamps: Vec<f64>,
}

impl LoopRun {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

fn validate(plant: &PlantParams, gains: &PiGains, sim: &SimConfig) -> Result<(), ConfigError> {
    sim.validate()?;
    plant.validate_for_tick(sim.tick())?;
    gains.validate()
}

/// Closes the PI loop through a sensor link and an actuator link.
pub fn run_closed_loop(
    plant: &PlantParams,
    gains: &PiGains,
    chan_cfg: &ChannelConfig,
    sim: &SimConfig,
) -> Result<LoopRun, ConfigError> {
    validate(plant, gains, sim)?;
    chan_cfg.validate()?;

    let ts = sim.control_period;
    let tick = sim.tick();
    let div = sim.tick_divisor as u64;
    let n = sim.periods();
    let r = sim.setpoint;

    let mut sensor_link = Channel::new(ChannelId::SensorToController, chan_cfg, tick, sim.seed);
    let mut actuator_link = Channel::new(ChannelId::ControllerToActuator, chan_cfg, tick, sim.seed);
    let mut process = PlantState::new(*plant, tick);
    let mut pi = PiState::default();
    let mut actuator = 0.0;
    let mut trace = Trace::new(ts);
    let mut divergence = None;
    let mut consumed_stamps = Vec::new();

    for k in 0..=n {
        let t = k as f64 * ts;
        let now = k * div;
        if let Some(p) = sensor_link.deliver() {
            pi.last_input = p.value;
            consumed_stamps.push(p.stamp);
        }
        if let Some(p) = actuator_link.deliver() {
            actuator = p.value;
        }
        let y = process.output();
        let u = pi.step(gains, r - pi.last_input, ts);
        if !y.is_finite() || !u.is_finite() {
            divergence = Some(Divergence { t });
            break;
        }
        trace.push(t, r, y, u);

        // seqs are k, strictly increasing per link
        sensor_link
            .push(Packet { seq: k, stamp: t, value: y }, now)
            .expect("sensor seq increases");
        actuator_link
            .push(Packet { seq: k, stamp: t, value: u }, now)
            .expect("actuator seq increases");
        if k == n {
            break;
        }
        for j in 1..=div {
            process
                .step(actuator, tick)
                .expect("actuator only holds finite controller outputs");
            sensor_link.advance(now + j);
            actuator_link.advance(now + j);
        }
    }

    Ok(LoopRun {
        trace,
        events: EventLog::from_channels([sensor_link.into_events(), actuator_link.into_events()]),
        divergence,
        consumed_stamps,
    })
}

/// Reference loop without any network: the controller sees `y_{k-1}` and
/// the actuator applies `u_{k-1}`, the same one-period transport an
/// unimpaired link has.
pub fn run_direct_loop(
    plant: &PlantParams,
    gains: &PiGains,
    sim: &SimConfig,
) -> Result<LoopRun, ConfigError> {
    validate(plant, gains, sim)?;

    let ts = sim.control_period;
    let tick = sim.tick();
    let n = sim.periods();
    let r = sim.setpoint;

    let mut process = PlantState::new(*plant, tick);
    let mut pi = PiState::default();
    let mut prev_y = 0.0;
    let mut prev_u = 0.0;
    let mut trace = Trace::new(ts);
    let mut divergence = None;
    let mut consumed_stamps = Vec::new();

    for k in 0..=n {
        let t = k as f64 * ts;
        let y = process.output();
        let u = pi.step(gains, r - prev_y, ts);
        if !y.is_finite() || !u.is_finite() {
            divergence = Some(Divergence { t });
            break;
        }
        trace.push(t, r, y, u);
        let actuator = prev_u;
        if k > 0 {
            consumed_stamps.push((k - 1) as f64 * ts);
        }
        prev_y = y;
        prev_u = u;
        if k == n {
            break;
        }
        for _ in 0..sim.tick_divisor {
            process.step(actuator, tick).expect("finite actuator value");
        }
    }

    Ok(LoopRun {
        trace,
        events: EventLog::default(),
        divergence,
        consumed_stamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DelayConfig;
    use proptest::prelude::*;

    fn short_sim(horizon: f64) -> SimConfig {
        SimConfig {
            horizon,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_gains_keep_plant_at_rest() {
        let run = run_closed_loop(
            &PlantParams::default(),
            &PiGains::new(0.0, 0.0),
            &ChannelConfig::default(),
            &short_sim(10.0),
        )
        .unwrap();
        assert!(run
            .trace
            .rows
            .iter()
            .all(|r| r.u == 0.0 && r.y == 0.0 && r.e == 1.0));
        let direct = run_direct_loop(&PlantParams::default(), &PiGains::new(0.0, 0.0), &short_sim(10.0)).unwrap();
        assert!(direct.trace.rows.iter().all(|r| r.y == 0.0));
    }

    #[test]
    fn ideal_links_match_direct_loop() {
        let sim = short_sim(20.0);
        let gains = PiGains::new(0.15, 0.12);
        let a = run_closed_loop(&PlantParams::default(), &gains, &ChannelConfig::ideal(), &sim).unwrap();
        let b = run_direct_loop(&PlantParams::default(), &gains, &sim).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn row_and_event_counts() {
        let sim = short_sim(30.0);
        let run = run_closed_loop(&PlantParams::default(), &PiGains::default(), &ChannelConfig::default(), &sim).unwrap();
        assert_eq!(run.trace.len(), 301);
        for id in [ChannelId::SensorToController, ChannelId::ControllerToActuator] {
            let seqs: Vec<u64> = run.events.channel(id).map(|e| e.seq).collect();
            assert_eq!(seqs, (0..=300).collect::<Vec<_>>());
        }
        for w in run.trace.rows.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn integral_action_removes_offset() {
        let sim = short_sim(200.0);
        let run = run_direct_loop(&PlantParams::default(), &PiGains::new(0.1, 0.08), &sim).unwrap();
        let last = run.trace.rows.last().unwrap();
        assert!(last.e.abs() < 1e-3, "final error {}", last.e);
    }

    #[test]
    fn unstable_gains_report_divergence() {
        let sim = short_sim(3000.0);
        let run = run_direct_loop(&PlantParams::default(), &PiGains::new(5.0, 5.0), &sim).unwrap();
        let d = run.divergence.expect("loop gain 25 cannot be stable");
        assert!(run.trace.rows.iter().all(|r| r.y.is_finite() && r.u.is_finite()));
        assert!((run.trace.rows.last().unwrap().t - (d.t - 0.1)).abs() < 1e-9);
    }

    #[test]
    fn config_violations_name_the_field() {
        let bad = SimConfig {
            horizon: 10.05,
            ..SimConfig::default()
        };
        let err = run_direct_loop(&PlantParams::default(), &PiGains::default(), &bad).unwrap_err();
        assert_eq!(err.field, "sim.horizon");
        let bad = SimConfig {
            tick_divisor: 0,
            ..SimConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "sim.tick_divisor");
        let chan = ChannelConfig {
            drop_prob: 1.5,
            ..ChannelConfig::default()
        };
        let err = run_closed_loop(&PlantParams::default(), &PiGains::default(), &chan, &SimConfig::default()).unwrap_err();
        assert_eq!(err.field, "channel.drop_prob");
    }

    #[test]
    fn tail_mean() {
        let mut tr = Trace::new(1.0);
        for k in 0..10 {
            tr.push(k as f64, 1.0, k as f64, 0.0);
        }
        assert_eq!(tr.tail_mean_y(0.2), 8.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn runs_are_deterministic(seed in any::<u64>(), kp in 0.0f64..0.4, ki in 0.0f64..0.3) {
            let sim = SimConfig { seed, horizon: 10.0, ..SimConfig::default() };
            let gains = PiGains::new(kp, ki);
            let a = run_closed_loop(&PlantParams::default(), &gains, &ChannelConfig::default(), &sim).unwrap();
            let b = run_closed_loop(&PlantParams::default(), &gains, &ChannelConfig::default(), &sim).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn short_delays_without_drops_match_direct_loop(kp in 0.0f64..0.4, ki in 0.0f64..0.3, seed in any::<u64>()) {
            // any delay below one period still lands at the next instant
            let chan = ChannelConfig { drop_prob: 0.0, delay: DelayConfig::uniform(0.1), ooo_buffer_cap: 1000 };
            let sim = SimConfig { seed, horizon: 10.0, ..SimConfig::default() };
            let gains = PiGains::new(kp, ki);
            let a = run_closed_loop(&PlantParams::default(), &gains, &chan, &sim).unwrap();
            let b = run_direct_loop(&PlantParams::default(), &gains, &sim).unwrap();
            prop_assert_eq!(a.trace, b.trace);
        }
    }
}

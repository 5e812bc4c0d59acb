//! Impaired one-way network link.
//!
//! A [`Channel`] chains three stages, each a discrete-time state machine
//! advanced at the engine tick:
//!
//! 1. drop: each pushed packet is discarded with probability `drop_prob`;
//! 2. delay: survivors are held for a random delay drawn from the
//!    configured law, rounded up to the tick and capped at `d_max`;
//! 3. order filter: once per control period, only the freshest arrival
//!    whose stamp beats everything already passed is delivered, and
//!    older arrivals are thrown away.
//!
//! Every push produces exactly one [`PacketEvent`] row. Time is carried as
//! an integer tick index so release comparisons are exact.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ConfigError};

/// A time-stamped scalar sample crossing the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub seq: u64,
    /// Send time in seconds.
    pub stamp: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelId {
    SensorToController,
    ControllerToActuator,
}

impl ChannelId {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelId::SensorToController => "sensor_to_ctrl",
            ChannelId::ControllerToActuator => "ctrl_to_act",
        }
    }

    /// ChaCha stream index; keeps the two links independent under one seed.
    pub(crate) fn stream(self) -> u64 {
        match self {
            ChannelId::SensorToController => 1,
            ChannelId::ControllerToActuator => 2,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    Constant,
    Uniform,
    TruncatedExponential,
}

/// Law-specific parameters. Absent values fall back to:
/// `value = d_max` (constant), `min = 0` (uniform), `mean = d_max / 3`
/// (truncated exponential).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    pub kind: DelayKind,
    pub params: DelayParams,
    pub d_max: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            kind: DelayKind::Uniform,
            params: DelayParams::default(),
            d_max: 0.3,
        }
    }
}

impl DelayConfig {
    /// Zero delay on every packet.
    pub fn none() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(delay: f64) -> Self {
        Self {
            kind: DelayKind::Constant,
            params: DelayParams::default(),
            d_max: delay,
        }
    }

    pub fn uniform(d_max: f64) -> Self {
        Self {
            kind: DelayKind::Uniform,
            params: DelayParams::default(),
            d_max,
        }
    }

    pub fn truncated_exponential(mean: f64, d_max: f64) -> Self {
        Self {
            kind: DelayKind::TruncatedExponential,
            params: DelayParams {
                mean: Some(mean),
                ..DelayParams::default()
            },
            d_max,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.d_max.is_finite() && self.d_max >= 0.0,
            "channel.delay.d_max",
            "must be finite and >= 0",
        )?;
        let p = &self.params;
        match self.kind {
            DelayKind::Constant => {
                ensure(p.min.is_none() && p.mean.is_none(), "channel.delay.params", "constant delay takes only `value`")?;
                if let Some(v) = p.value {
                    ensure(
                        v.is_finite() && (0.0..=self.d_max).contains(&v),
                        "channel.delay.params.value",
                        "must lie in [0, d_max]",
                    )?;
                }
            }
            DelayKind::Uniform => {
                ensure(p.value.is_none() && p.mean.is_none(), "channel.delay.params", "uniform delay takes only `min`")?;
                if let Some(m) = p.min {
                    ensure(
                        m.is_finite() && (0.0..=self.d_max).contains(&m),
                        "channel.delay.params.min",
                        "must lie in [0, d_max]",
                    )?;
                }
            }
            DelayKind::TruncatedExponential => {
                ensure(
                    p.value.is_none() && p.min.is_none(),
                    "channel.delay.params",
                    "truncated_exponential delay takes only `mean`",
                )?;
                if let Some(m) = p.mean {
                    ensure(m.is_finite() && m > 0.0, "channel.delay.params.mean", "must be finite and > 0")?;
                }
            }
        }
        Ok(())
    }

    /// Draws one un-quantized delay in `[0, d_max]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d_max = self.d_max;
        let d = match self.kind {
            DelayKind::Constant => self.params.value.unwrap_or(d_max),
            DelayKind::Uniform => {
                let lo = self.params.min.unwrap_or(0.0);
                lo + (d_max - lo) * rng.random::<f64>()
            }
            DelayKind::TruncatedExponential => {
                if d_max == 0.0 {
                    0.0
                } else {
                    let mean = self.params.mean.unwrap_or(d_max / 3.0);
                    // inverse CDF of Exp(1/mean) restricted to [0, d_max]
                    let mass = -(-d_max / mean).exp_m1();
                    -mean * (-rng.random::<f64>() * mass).ln_1p()
                }
            }
        };
        d.clamp(0.0, d_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub drop_prob: f64,
    pub delay: DelayConfig,
    pub ooo_buffer_cap: usize,
}

impl Default for ChannelConfig {
    /// Nominal profile: 10% drop, uniform delay on `[0, 0.3]` s.
    fn default() -> Self {
        Self {
            drop_prob: 0.1,
            delay: DelayConfig::default(),
            ooo_buffer_cap: 1000,
        }
    }
}

impl ChannelConfig {
    /// No drops, no delay. The link still costs one control period.
    pub fn ideal() -> Self {
        Self {
            drop_prob: 0.0,
            delay: DelayConfig::none(),
            ooo_buffer_cap: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            (0.0..=1.0).contains(&self.drop_prob),
            "channel.drop_prob",
            "must lie in [0, 1]",
        )?;
        ensure(self.ooo_buffer_cap >= 1, "channel.ooo_buffer_cap", "must be >= 1")?;
        self.delay.validate()
    }
}

/// One row of the per-packet network log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEvent {
    pub seq: u64,
    pub channel: ChannelId,
    pub t_send: f64,
    /// Realized (quantized) delay; `None` when dropped.
    pub delay: Option<f64>,
    pub dropped: bool,
    pub discarded_ooo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("packet seq {seq} pushed after seq {last}; sequence numbers must increase")]
    DuplicateSeq { seq: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Dropped,
    Enqueued { release_tick: u64, delay_ticks: u64 },
}

/// Result of one order-filter consultation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub delivered: Option<Packet>,
    pub discarded: Vec<Packet>,
}

/// Bounded store of arrivals that only ever passes strictly newer stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFilter {
    cap: usize,
    buffer: Vec<Packet>,
    last_passed: Option<f64>,
}

impl OrderFilter {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "order filter capacity must be >= 1");
        Self {
            cap,
            buffer: Vec::new(),
            last_passed: None,
        }
    }

    pub fn last_passed_stamp(&self) -> Option<f64> {
        self.last_passed
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Buffers an arrival. Returns the entry evicted to respect the
    /// capacity (the lowest stamp), if any.
    pub fn insert(&mut self, pkt: Packet) -> Option<Packet> {
        debug_assert!(
            self.buffer.iter().all(|p| p.stamp != pkt.stamp),
            "two buffered packets share stamp {}",
            pkt.stamp
        );
        self.buffer.push(pkt);
        if self.buffer.len() > self.cap {
            let oldest = self
                .buffer
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.stamp.total_cmp(&b.1.stamp))
                .map(|(i, _)| i)?;
            Some(self.buffer.swap_remove(oldest))
        } else {
            None
        }
    }

    /// Emits the freshest buffered packet if it is newer than the last one
    /// passed; everything else in the buffer is stale and discarded.
    pub fn select(&mut self) -> Selection {
        let mut arrivals = std::mem::take(&mut self.buffer);
        arrivals.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
        let fresh = match (arrivals.last(), self.last_passed) {
            (Some(newest), Some(last)) => newest.stamp > last,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let delivered = if fresh { arrivals.pop() } else { None };
        if let Some(p) = delivered {
            self.last_passed = Some(p.stamp);
        }
        Selection {
            delivered,
            discarded: arrivals,
        }
    }
}

/// Rounds a delay up to whole ticks, never beyond `d_max`.
fn quantize_up(delay: f64, d_max: f64, tick: f64) -> u64 {
    let cap = (d_max / tick + 1e-9).floor().max(0.0) as u64;
    let ticks = (delay / tick - 1e-9).ceil().max(0.0) as u64;
    ticks.min(cap)
}

/// One direction of the network: drop, delay and order filter plus its log.
#[derive(Debug, Clone)]
pub struct Channel {
    id: ChannelId,
    cfg: ChannelConfig,
    tick: f64,
    rng: ChaCha8Rng,
    in_flight: BTreeMap<(u64, u64), Packet>,
    filter: OrderFilter,
    log: Vec<PacketEvent>,
}

impl Channel {
    /// `seed` is the master seed; the channel derives its own stream from it.
    pub fn new(id: ChannelId, cfg: &ChannelConfig, tick: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.stream());
        Self {
            id,
            cfg: *cfg,
            tick,
            rng,
            in_flight: BTreeMap::new(),
            filter: OrderFilter::new(cfg.ooo_buffer_cap),
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> ChannelId {
        self.id
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn events(&self) -> &[PacketEvent] {
        &self.log
    }

    pub fn into_events(self) -> Vec<PacketEvent> {
        self.log
    }

    /// Offers a packet sent at tick `now`. Drop is decided here, then a
    /// delay is drawn for survivors.
    pub fn push(&mut self, pkt: Packet, now: u64) -> Result<PushOutcome, ChannelError> {
        self.check_seq(pkt.seq)?;
        let dropped = self.rng.random::<f64>() < self.cfg.drop_prob;
        let (outcome, delay) = if dropped {
            (PushOutcome::Dropped, None)
        } else {
            let raw = self.cfg.delay.sample(&mut self.rng);
            let delay_ticks = quantize_up(raw, self.cfg.delay.d_max, self.tick);
            let release_tick = now + delay_ticks;
            self.in_flight.insert((release_tick, pkt.seq), pkt);
            (
                PushOutcome::Enqueued {
                    release_tick,
                    delay_ticks,
                },
                Some(delay_ticks as f64 * self.tick),
            )
        };
        self.log.push(PacketEvent {
            seq: pkt.seq,
            channel: self.id,
            t_send: pkt.stamp,
            delay,
            dropped,
            discarded_ooo: false,
        });
        Ok(outcome)
    }

    /// Logs a packet that never reached this link (lost upstream) as
    /// dropped, without consuming randomness.
    pub fn record_lost(&mut self, pkt: Packet) -> Result<(), ChannelError> {
        self.check_seq(pkt.seq)?;
        self.log.push(PacketEvent {
            seq: pkt.seq,
            channel: self.id,
            t_send: pkt.stamp,
            delay: None,
            dropped: true,
            discarded_ooo: false,
        });
        Ok(())
    }

    /// Releases every in-flight packet due at or before tick `now`, in
    /// release order (ties by seq).
    pub fn tick(&mut self, now: u64) -> Vec<Packet> {
        let pending = self.in_flight.split_off(&(now + 1, 0));
        let due = std::mem::replace(&mut self.in_flight, pending);
        due.into_values().collect()
    }

    /// Hands a released packet to the order filter.
    pub fn accept(&mut self, pkt: Packet) {
        if let Some(evicted) = self.filter.insert(pkt) {
            self.mark_discarded(evicted.seq);
        }
    }

    /// `tick` followed by `accept` of everything released.
    pub fn advance(&mut self, now: u64) {
        for pkt in self.tick(now) {
            self.accept(pkt);
        }
    }

    /// Consults the order filter once, logging whatever it throws away.
    pub fn deliver(&mut self) -> Option<Packet> {
        let Selection {
            delivered,
            discarded,
        } = self.filter.select();
        for p in discarded {
            self.mark_discarded(p.seq);
        }
        delivered
    }

    fn check_seq(&self, seq: u64) -> Result<(), ChannelError> {
        match self.log.last() {
            Some(last) if seq <= last.seq => Err(ChannelError::DuplicateSeq {
                seq,
                last: last.seq,
            }),
            _ => Ok(()),
        }
    }

    /// Flags the row for `seq`. Rows are pushed in seq order, so this is a
    /// binary search.
    pub(crate) fn mark_discarded(&mut self, seq: u64) {
        if let Ok(i) = self.log.binary_search_by_key(&seq, |e| e.seq) {
            self.log[i].discarded_ooo = true;
        }
    }
}

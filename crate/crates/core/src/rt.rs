//! Two-process loop over UDP with master/slave lock step.
//!
//! The plant node is the master. At each control period it sends the
//! sensor sample the emulated sensor link delivers (if any), then a TICK
//! carrying the period index, and waits for the controller's CONTROL reply
//! for that period. The controller node is the slave: it only computes
//! period `k` after TICK `k` arrives, and answers with exactly one CONTROL.
//!
//! Both emulated links run inside the master, the sensor link before
//! transmission and the actuator link on receipt, so the physical path only
//! carries what the emulated network let through. On an unimpaired
//! localhost path the master therefore reproduces
//! [`run_closed_loop`](crate::sim::run_closed_loop) bit for bit.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Channel, ChannelConfig, ChannelId, OrderFilter, Packet};
use crate::controller::{PiGains, PiState};
use crate::error::{ensure, ConfigError};
use crate::plant::{PlantParams, PlantState};
use crate::sim::{Divergence, EventLog, SimConfig, Trace};
use crate::wire::{decode_wire, encode_wire, WireKind, WirePacket, WIRE_LEN};

/// Handshake TICKs are repeated at this interval until the first reply.
const HANDSHAKE_RETRY: Duration = Duration::from_millis(50);
const DONE_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[serde(alias = "plant")]
    PlantMaster,
    #[serde(alias = "controller")]
    ControllerSlave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub bind: SocketAddr,
    pub peer: SocketAddr,
    pub role: Role,
    pub plant: PlantParams,
    pub gains: PiGains,
    pub sim: SimConfig,
    pub channel: ChannelConfig,
    /// Wall-clock wait budget in seconds (handshake and per period).
    pub sync_timeout: f64,
    /// Pace the master's periods at real time `Ts`.
    pub pace: bool,
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.bind != self.peer, "rt.peer", "must differ from rt.bind")?;
        ensure(
            self.sync_timeout.is_finite() && self.sync_timeout > 0.0,
            "rt.sync_timeout",
            "must be finite and > 0",
        )?;
        self.sim.validate()?;
        self.plant.validate_for_tick(self.sim.tick())?;
        self.gains.validate()?;
        self.channel.validate()
    }

    fn budget(&self) -> Duration {
        Duration::from_secs_f64(self.sync_timeout)
    }
}

#[derive(Debug, Error)]
pub enum RtError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
    #[error("no reply from the controller node within {0:?}")]
    Handshake(Duration),
    #[error("no TICK from the plant node within {timeout:?} (last period handled: {last_period:?})")]
    TickTimeout {
        timeout: Duration,
        last_period: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantNodeRun {
    pub trace: Trace,
    pub events: EventLog,
    /// Periods whose CONTROL reply did not arrive within the budget.
    pub misses: u64,
    pub malformed: u64,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerNodeRun {
    /// Controller view: `y` is the held measurement, `e = r − y` its error.
    pub trace: Trace,
    /// Sensor packets the order filter threw away.
    pub discarded: Vec<u64>,
    pub stale_ticks: u64,
    pub malformed: u64,
}

enum Recv {
    Packet(WirePacket),
    Malformed,
    Timeout,
}

fn recv_until(socket: &UdpSocket, deadline: Instant) -> io::Result<Recv> {
    let mut buf = [0u8; 64];
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(Recv::Timeout);
        }
        socket.set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))?;
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                return Ok(match decode_wire(&buf[..n]) {
                    Ok(p) => Recv::Packet(p),
                    Err(_) => Recv::Malformed,
                })
            }
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                ) =>
            {
                continue
            }
            // ICMP unreachable from a peer that is not up yet
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                thread::sleep(Duration::from_millis(1));
                continue;
            }
            Err(e) => return Err(e),
        }
    }
}

fn send(socket: &UdpSocket, peer: SocketAddr, pkt: &WirePacket) -> io::Result<()> {
    let frame = encode_wire(pkt);
    debug_assert_eq!(frame.len(), WIRE_LEN);
    match socket.send_to(&frame, peer) {
        Ok(_) => Ok(()),
        // lost datagram; the lock-step budget deals with it
        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(()),
        Err(e) => Err(e),
    }
}

pub fn run_plant_node(cfg: &NodeConfig) -> Result<PlantNodeRun, RtError> {
    cfg.validate()?;
    let socket = UdpSocket::bind(cfg.bind)?;
    run_plant_node_on(&socket, cfg)
}

/// Master loop on an already-bound socket (`cfg.bind` is ignored).
pub fn run_plant_node_on(socket: &UdpSocket, cfg: &NodeConfig) -> Result<PlantNodeRun, RtError> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let ts = sim.control_period;
    let tick = sim.tick();
    let div = sim.tick_divisor as u64;
    let n = sim.periods();
    let r = sim.setpoint;

    let mut sensor_link = Channel::new(ChannelId::SensorToController, &cfg.channel, tick, sim.seed);
    let mut actuator_link = Channel::new(ChannelId::ControllerToActuator, &cfg.channel, tick, sim.seed);
    let mut process = PlantState::new(cfg.plant, tick);
    let mut actuator = 0.0;
    let mut last_u = 0.0;
    let mut trace = Trace::new(ts);
    let mut misses = 0;
    let mut malformed = 0;
    let mut divergence = None;
    let start = Instant::now();

    for k in 0..=n {
        if cfg.pace {
            let due = start + Duration::from_secs_f64(k as f64 * ts);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        let t = k as f64 * ts;
        let now = k * div;

        if let Some(p) = sensor_link.deliver() {
            send(socket, cfg.peer, &WirePacket::from_packet(WireKind::Sensor, &p))?;
        }
        let tick_pkt = WirePacket::tick(k, t);
        send(socket, cfg.peer, &tick_pkt)?;

        let deadline = Instant::now() + cfg.budget();
        let mut resend_at = Instant::now() + HANDSHAKE_RETRY;
        let reply = loop {
            let wait_until = if k == 0 { deadline.min(resend_at) } else { deadline };
            match recv_until(socket, wait_until)? {
                Recv::Packet(p) if p.kind == WireKind::Control && p.seq == k => break Some(p.value),
                // stale CONTROL, foreign TICKs (e.g. a second master), DONE
                Recv::Packet(_) => {}
                Recv::Malformed => malformed += 1,
                Recv::Timeout if Instant::now() >= deadline => break None,
                Recv::Timeout => {
                    send(socket, cfg.peer, &tick_pkt)?;
                    resend_at = Instant::now() + HANDSHAKE_RETRY;
                }
            }
        };
        let control = Packet {
            seq: k,
            stamp: t,
            value: last_u,
        };
        let u = match reply {
            Some(u) => {
                actuator_link
                    .push(Packet { value: u, ..control }, now)
                    .expect("one push per period");
                u
            }
            None if k == 0 => return Err(RtError::Handshake(cfg.budget())),
            None => {
                misses += 1;
                actuator_link.record_lost(control).expect("one push per period");
                last_u
            }
        };
        last_u = u;

        if let Some(p) = actuator_link.deliver() {
            actuator = p.value;
        }
        let y = process.output();
        if !y.is_finite() || !u.is_finite() {
            divergence = Some(Divergence { t });
            break;
        }
        trace.push(t, r, y, u);
        sensor_link
            .push(Packet { seq: k, stamp: t, value: y }, now)
            .expect("one push per period");
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

    let last = trace.rows.last().map_or(0.0, |row| row.t);
    for _ in 0..DONE_REPEATS {
        send(socket, cfg.peer, &WirePacket::done(n, last))?;
    }
    Ok(PlantNodeRun {
        trace,
        events: EventLog::from_channels([sensor_link.into_events(), actuator_link.into_events()]),
        misses,
        malformed,
        divergence,
    })
}

pub fn run_controller_node(cfg: &NodeConfig) -> Result<ControllerNodeRun, RtError> {
    cfg.validate()?;
    let socket = UdpSocket::bind(cfg.bind)?;
    run_controller_node_on(&socket, cfg)
}

/// Slave loop on an already-bound socket (`cfg.bind` is ignored).
pub fn run_controller_node_on(socket: &UdpSocket, cfg: &NodeConfig) -> Result<ControllerNodeRun, RtError> {
    cfg.validate()?;
    let ts = cfg.sim.control_period;
    let r = cfg.sim.setpoint;
    let mut filter = OrderFilter::new(cfg.channel.ooo_buffer_cap);
    let mut pi = PiState::default();
    let mut trace = Trace::new(ts);
    let mut discarded = Vec::new();
    let mut stale_ticks = 0;
    let mut malformed = 0;
    let mut last: Option<(u64, WirePacket)> = None;

    loop {
        let deadline = Instant::now() + cfg.budget();
        let pkt = match recv_until(socket, deadline)? {
            Recv::Packet(p) => p,
            Recv::Malformed => {
                malformed += 1;
                continue;
            }
            Recv::Timeout => {
                return Err(RtError::TickTimeout {
                    timeout: cfg.budget(),
                    last_period: last.map(|(k, _)| k),
                })
            }
        };
        match pkt.kind {
            WireKind::Sensor => {
                if let Some(evicted) = filter.insert(pkt.packet()) {
                    discarded.push(evicted.seq);
                }
            }
            WireKind::Tick => {
                match last {
                    // repeated TICK: the master missed our reply
                    Some((k, reply)) if pkt.seq == k => {
                        send(socket, cfg.peer, &reply)?;
                        continue;
                    }
                    Some((k, _)) if pkt.seq < k => {
                        stale_ticks += 1;
                        continue;
                    }
                    _ => {}
                }
                let selection = filter.select();
                discarded.extend(selection.discarded.iter().map(|p| p.seq));
                if let Some(p) = selection.delivered {
                    pi.last_input = p.value;
                }
                let u = pi.step(&cfg.gains, r - pi.last_input, ts);
                let reply = WirePacket {
                    kind: WireKind::Control,
                    seq: pkt.seq,
                    stamp: pkt.stamp,
                    value: u,
                };
                send(socket, cfg.peer, &reply)?;
                trace.push(pkt.stamp, r, pi.last_input, u);
                last = Some((pkt.seq, reply));
            }
            WireKind::Done => {
                return Ok(ControllerNodeRun {
                    trace,
                    discarded,
                    stale_ticks,
                    malformed,
                })
            }
            WireKind::Control => malformed += 1,
        }
    }
}

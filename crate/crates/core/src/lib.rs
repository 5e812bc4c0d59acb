//! Deterministic test-bed for networked control loops.
//!
//! A PI controller drives a first-order-plus-dead-time plant through two
//! impaired network links (random drop, random delay, stale-packet
//! discard). Gains are tuned by a genetic algorithm on a weighted
//! ITAE + ISCO cost, and the tuned loop can be replayed between two
//! processes over UDP in lock step.

pub mod channel;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod objective;
pub mod plant;
pub mod report;
pub mod rt;
pub mod sim;
pub mod tuner;
pub mod wire;

pub use channel::{Channel, ChannelConfig, ChannelId, DelayConfig, DelayKind, OrderFilter, Packet, PacketEvent};
pub use controller::{PiGains, PiState};
pub use error::ConfigError;
pub use objective::{objective, ObjectiveWeights};
pub use plant::{foptd_step_analytic, PlantParams, PlantState};
pub use sim::{run_closed_loop, run_direct_loop, EventLog, LoopRun, SimConfig, Trace, TraceRow};
pub use tuner::{evaluate_fitness, ga_minimize, ga_tune, GaConfig, GainBounds, TuneResult};
pub use config::RunConfig;
pub use rt::{run_controller_node, run_plant_node, NodeConfig, Role, RtError};
pub use wire::{decode_wire, encode_wire, WireError, WireKind, WirePacket};

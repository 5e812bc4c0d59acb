//! JSON run configuration shared by every subcommand.
//!
//! Every section and key is optional; absent keys take the defaults of the
//! corresponding type. Unknown keys are rejected with their path.

use std::net::SocketAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::controller::PiGains;
use crate::error::{ensure, ConfigError};
use crate::objective::ObjectiveWeights;
use crate::plant::PlantParams;
use crate::rt::{NodeConfig, Role};
use crate::sim::SimConfig;
use crate::tuner::GaConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RtSection {
    pub bind: String,
    pub peer: String,
    pub role: Role,
    pub sync_timeout: f64,
    pub pace: bool,
}

impl Default for RtSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:47100".into(),
            peer: "127.0.0.1:47101".into(),
            role: Role::PlantMaster,
            sync_timeout: 2.0,
            pace: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub controller: PiGains,
    pub sim: SimConfig,
    pub channel: ChannelConfig,
    pub objective: ObjectiveWeights,
    pub ga: GaConfig,
    pub rt: RtSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.plant.validate_for_tick(self.sim.tick())?;
        self.controller.validate()?;
        self.channel.validate()?;
        self.objective.validate()?;
        self.ga.validate()?;
        let rt = &self.rt;
        ensure(
            rt.sync_timeout.is_finite() && rt.sync_timeout > 0.0,
            "rt.sync_timeout",
            "must be finite and > 0",
        )?;
        let bind = parse_addr(&rt.bind, "rt.bind")?;
        let peer = parse_addr(&rt.peer, "rt.peer")?;
        ensure(bind != peer, "rt.peer", "must differ from rt.bind")
    }

    /// Node settings for `role`. The file describes one node's view; asking
    /// for the other role swaps `bind` and `peer`.
    pub fn node_config(&self, role: Role) -> Result<NodeConfig, ConfigError> {
        let mut bind = parse_addr(&self.rt.bind, "rt.bind")?;
        let mut peer = parse_addr(&self.rt.peer, "rt.peer")?;
        if role != self.rt.role {
            std::mem::swap(&mut bind, &mut peer);
        }
        let node = NodeConfig {
            bind,
            peer,
            role,
            plant: self.plant,
            gains: self.controller,
            sim: self.sim,
            channel: self.channel,
            sync_timeout: self.rt.sync_timeout,
            pace: self.rt.pace,
        };
        node.validate()?;
        Ok(node)
    }
}

fn parse_addr(s: &str, field: &str) -> Result<SocketAddr, ConfigError> {
    s.parse()
        .map_err(|e| ConfigError::new(field, format!("`{s}` is not an address:port ({e})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DelayKind;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"plant": {"K": 2.0}, "channel": {"delay": {"kind": "truncated_exponential", "params": {"mean": 0.05}, "d_max": 0.2}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.plant.gain, 2.0);
        assert_eq!(cfg.plant.time_constant, 1.5);
        assert_eq!(cfg.channel.delay.kind, DelayKind::TruncatedExponential);
        assert_eq!(cfg.channel.delay.params.mean, Some(0.05));
        assert_eq!(cfg.channel.drop_prob, 0.1);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = RunConfig::from_json(r#"{"channel": {"delay": {"jitter": 1}}}"#).unwrap_err();
        assert_eq!(err.field, "channel.delay.jitter");
        assert!(err.reason.contains("jitter"), "{}", err.reason);
        let err = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.reason.contains("bogus"));
    }

    #[test]
    fn invariant_violation_reports_field() {
        let err = RunConfig::from_json(r#"{"sim": {"Ts": 0.1, "horizon": 0.05}}"#).unwrap_err();
        assert_eq!(err.field, "sim.horizon");
        let err = RunConfig::from_json(r#"{"ga": {"elitism_count": 0}}"#).unwrap_err();
        assert_eq!(err.field, "ga.elitism_count");
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::from_json(r#"{"sim": {"seed": 18446744073709551615}, "channel": {"drop_prob": 0.30000000000000004}}"#).unwrap();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.sim.seed, u64::MAX);
    }

    #[test]
    fn role_flip_swaps_endpoints() {
        let cfg = RunConfig::default();
        let plant = cfg.node_config(Role::PlantMaster).unwrap();
        let ctrl = cfg.node_config(Role::ControllerSlave).unwrap();
        assert_eq!(plant.bind, ctrl.peer);
        assert_eq!(plant.peer, ctrl.bind);
    }

    #[test]
    fn role_aliases() {
        let cfg = RunConfig::from_json(r#"{"rt": {"role": "controller"}}"#).unwrap();
        assert_eq!(cfg.rt.role, Role::ControllerSlave);
    }
}

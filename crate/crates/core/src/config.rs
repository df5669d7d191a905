//! Scenario configuration: the documented key-value schema behind the CLI,
//! plus seed derivation and the config digest stamped into output files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::Graph;
use crate::protocol::ProtocolConfig;
use crate::radio::ShadowingParams;
use crate::scenario::{line, random_geometric, ring, two_cluster_bridge, ScenarioError, ScheduleConfig, TwoClusterParams};
use crate::sim::{ChannelConfig, ChannelMode, Placement};
use crate::voting::VoteRule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

fn d_nodes() -> u32 {
    175
}
fn d_area_side() -> f64 {
    3000.0
}
fn d_comm_range() -> f64 {
    400.0
}
fn d_bridge_length() -> f64 {
    250.0
}
fn d_cluster() -> u32 {
    10
}
fn d_radius() -> f64 {
    230.0
}
fn d_guard() -> f64 {
    170.0
}
fn d_vertical_extent() -> f64 {
    300.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyConfig {
    RandomGeometric {
        #[serde(default = "d_nodes")]
        nodes: u32,
        #[serde(default = "d_area_side")]
        area_side: f64,
        #[serde(default = "d_comm_range")]
        comm_range: f64,
    },
    TwoCluster {
        #[serde(default = "d_bridge_length")]
        bridge_length: f64,
        #[serde(default = "d_cluster")]
        left: u32,
        #[serde(default = "d_cluster")]
        right: u32,
        #[serde(default = "d_radius")]
        radius: f64,
        #[serde(default = "d_guard")]
        guard: f64,
        #[serde(default = "d_vertical_extent")]
        vertical_extent: f64,
        #[serde(default = "d_comm_range")]
        comm_range: f64,
    },
    Ring {
        nodes: u32,
        spacing: f64,
    },
    Line {
        nodes: u32,
        spacing: f64,
    },
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::RandomGeometric {
            nodes: d_nodes(),
            area_side: d_area_side(),
            comm_range: d_comm_range(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Lossless,
    Shadowing,
}

fn d_max_tx_time() -> f64 {
    0.002
}
fn d_unicast_attempts() -> u32 {
    7
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSection {
    pub mode: ChannelKind,
    /// Lossless delivery range, and the hard cutoff of the shadowing model.
    #[serde(default = "d_comm_range")]
    pub range: f64,
    #[serde(default = "d_max_tx_time")]
    pub max_tx_time: f64,
    #[serde(default = "d_unicast_attempts")]
    pub unicast_attempts: u32,
    #[serde(default = "d_true")]
    pub ack_modeled: bool,
    #[serde(default = "ShadowingParams::default")]
    pub shadowing: ShadowingParams,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            mode: ChannelKind::Shadowing,
            range: d_comm_range(),
            max_tx_time: d_max_tx_time(),
            unicast_attempts: d_unicast_attempts(),
            ack_modeled: true,
            shadowing: ShadowingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Dibadawn,
    Chaudhuri,
}

fn d_ttl() -> u32 {
    10
}
fn d_mtt() -> f64 {
    0.056
}
fn d_jitter_divisor() -> f64 {
    4.0
}
fn d_history_window() -> usize {
    5
}
fn d_trust() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    #[serde(default = "d_ttl")]
    pub ttl: u32,
    #[serde(default = "d_mtt")]
    pub max_traversal_time: f64,
    #[serde(default = "d_jitter_divisor")]
    pub jitter_divisor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_slot: Option<f64>,
    #[serde(default = "d_history_window")]
    pub history_window: usize,
    #[serde(default = "d_trust")]
    pub trust_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<VoteRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_bridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_articulation: Option<f64>,
    #[serde(default = "d_true")]
    pub asymmetric_guard: bool,
    #[serde(default = "d_true")]
    pub log_statements: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            kind: ProtocolKind::Dibadawn,
            ttl: d_ttl(),
            max_traversal_time: d_mtt(),
            jitter_divisor: d_jitter_divisor(),
            backward_slot: None,
            history_window: d_history_window(),
            trust_threshold: d_trust(),
            rule: None,
            prior_bridge: None,
            prior_articulation: None,
            asymmetric_guard: true,
            log_statements: true,
        }
    }
}

fn d_warmup() -> f64 {
    200.0
}
fn d_eval_duration() -> f64 {
    300.0
}
fn d_period() -> f64 {
    30.0
}
fn d_start_probability() -> f64 {
    0.8
}
fn d_initial_delay_max() -> f64 {
    20.0
}
fn d_snapshot_period() -> f64 {
    30.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSection {
    #[serde(default = "d_warmup")]
    pub warmup: f64,
    #[serde(default = "d_eval_duration")]
    pub eval_duration: f64,
    #[serde(default = "d_period")]
    pub period: f64,
    #[serde(default = "d_start_probability")]
    pub start_probability: f64,
    #[serde(default = "d_initial_delay_max")]
    pub initial_delay_max: f64,
    #[serde(default = "d_snapshot_period")]
    pub snapshot_period: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            warmup: d_warmup(),
            eval_duration: d_eval_duration(),
            period: d_period(),
            start_probability: d_start_probability(),
            initial_delay_max: d_initial_delay_max(),
            snapshot_period: d_snapshot_period(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    #[default]
    None,
    /// Only the two-cluster bridge edge 0-1 is evaluable.
    BridgeOnly,
}

fn d_thresholds() -> Vec<f64> {
    vec![100.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSection {
    #[serde(default = "d_thresholds")]
    pub etx_thresholds: Vec<f64>,
    #[serde(default = "d_true")]
    pub detected_twice: bool,
    #[serde(default)]
    pub mask: MaskKind,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            etx_thresholds: d_thresholds(),
            detected_twice: true,
            mask: MaskKind::None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.protocol;
        if p.ttl < 1 {
            return Err(ConfigError::Invalid("protocol.ttl must be at least 1".into()));
        }
        if p.max_traversal_time <= 0.0 || p.jitter_divisor <= 0.0 {
            return Err(ConfigError::Invalid(
                "protocol timing parameters must be positive".into(),
            ));
        }
        if p.kind == ProtocolKind::Chaudhuri && self.channel.mode != ChannelKind::Lossless {
            return Err(ConfigError::Invalid(
                "the chaudhuri baseline assumes error-free links; use channel.mode = \"lossless\"".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.schedule.start_probability) {
            return Err(ConfigError::Invalid(
                "schedule.start_probability outside [0,1]".into(),
            ));
        }
        if self.channel.unicast_attempts < 1 {
            return Err(ConfigError::Invalid(
                "channel.unicast_attempts must be at least 1".into(),
            ));
        }
        if let Some(rule) = p.rule {
            if rule == VoteRule::Weighted && p.prior_bridge.is_none() {
                return Err(ConfigError::Invalid(
                    "the weighted rule needs protocol.prior_bridge".into(),
                ));
            }
        }
        for t in &self.evaluation.etx_thresholds {
            if !(*t > 0.0) {
                return Err(ConfigError::Invalid(format!("bad ETX threshold {t}")));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let hash = hasher.finalize();
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_topology(&self, seed: u64) -> Result<(Graph, Placement), ScenarioError> {
        match &self.topology {
            TopologyConfig::RandomGeometric {
                nodes,
                area_side,
                comm_range,
            } => random_geometric(*nodes, *area_side, *comm_range, seed),
            TopologyConfig::TwoCluster {
                bridge_length,
                left,
                right,
                radius,
                guard,
                vertical_extent,
                comm_range,
            } => two_cluster_bridge(
                &TwoClusterParams {
                    bridge_length: *bridge_length,
                    nodes_left: *left,
                    nodes_right: *right,
                    radius: *radius,
                    guard: *guard,
                    vertical_extent: *vertical_extent,
                },
                *comm_range,
                seed,
            ),
            TopologyConfig::Ring { nodes, spacing } => ring(*nodes, *spacing),
            TopologyConfig::Line { nodes, spacing } => line(*nodes, *spacing),
        }
    }

    pub fn build_channel(&self) -> ChannelConfig {
        let mode = match self.channel.mode {
            ChannelKind::Lossless => ChannelMode::Lossless {
                range: self.channel.range,
            },
            ChannelKind::Shadowing => ChannelMode::Shadowing {
                params: self.channel.shadowing.clone(),
                cutoff: Some(self.channel.range),
            },
        };
        ChannelConfig {
            mode,
            max_tx_time: self.channel.max_tx_time,
            unicast_attempts: self.channel.unicast_attempts,
            ack_modeled: self.channel.ack_modeled,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let p = &self.protocol;
        ProtocolConfig {
            initial_ttl: p.ttl,
            max_traversal_time: p.max_traversal_time,
            jitter_divisor: p.jitter_divisor,
            backward_slot: p.backward_slot,
            history_window: p.history_window,
            trust_threshold: p.trust_threshold,
            rule: p.rule,
            prior_bridge: p.prior_bridge,
            prior_articulation: p.prior_articulation,
            asymmetric_guard: p.asymmetric_guard,
            log_statements: p.log_statements,
        }
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        let s = &self.schedule;
        ScheduleConfig {
            warmup: s.warmup,
            eval_duration: s.eval_duration,
            period: s.period,
            start_probability: s.start_probability,
            initial_delay_max: s.initial_delay_max,
            snapshot_period: s.snapshot_period,
        }
    }
}

/// Stable per-purpose seed derivation (splitmix64 over a salted master).
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

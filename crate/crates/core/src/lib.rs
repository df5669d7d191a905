//! Deterministic discrete-event simulation of wireless mesh networks with
//! distributed bridge and articulation-point detection, exact graph oracles,
//! an ETX-based reference-topology pipeline, and an evaluation harness.

pub mod artifacts;
pub mod chaudhuri;
pub mod config;
pub mod eval;
pub mod graph;
pub mod protocol;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod voting;

pub use artifacts::{FileHeader, RunArtifacts, RunStats, SnapshotRow, TOOL_VERSION};
pub use config::{derive_seed, ScenarioConfig};
pub use eval::{
    build_reference, classify_run, mean_ci, revote_snapshots, ClassifyOptions, ConfusionMatrix,
    MetricSample,
};
pub use graph::{
    brute_force_report, connected_components, tarjan_report, BiconnectivityReport, Edge, Graph,
    NodeId,
};
pub use protocol::{competence, Dibadawn, ExplorerId, NodeResults, ProtocolConfig};
pub use radio::{
    etx_from_counters, etx_from_probabilities, etx_reference_graph, reception_probability,
    ShadowingParams, TrafficCounters,
};
pub use scenario::{
    random_geometric, ring, run_one_search, run_schedule, two_cluster_bridge, CaptureOptions,
    ScheduleConfig, TwoClusterParams,
};
pub use sim::{ChannelConfig, ChannelMode, Engine, Placement, Protocol, Sim};
pub use voting::{network_prior, vote, weight, RuleConfig, Statement, VoteRule};

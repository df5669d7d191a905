//! Topology generators and the experiment schedule: warmup, periodic
//! probabilistic search starts per node, snapshot logging, and graceful
//! drain of the last executions.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::artifacts::{RunArtifacts, RunStats, SnapshotRow};
use crate::chaudhuri::{ensure_reliable, ChMsg, Chaudhuri, ChaudhuriError, NoTimer};
use crate::graph::{Edge, Graph, GraphError, NodeId};
use crate::protocol::{
    Dibadawn, DibaMsg, DibaTimer, NodeResults, ProtocolConfig, StatementRecord,
};
use crate::sim::{ChannelConfig, Engine, Placement, Protocol, Sim, SimError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("could not generate a connected topology after {0} attempts")]
    RetriesExhausted(u32),
    #[error("invalid scenario parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Chaudhuri(#[from] ChaudhuriError),
}

/// Timing of one experiment run.
#[derive(Debug, Clone)]
pub struct ScheduleConfig {
    /// Un-evaluated lead-in, seconds.
    pub warmup: f64,
    /// Evaluated phase, seconds.
    pub eval_duration: f64,
    /// Interval between search-start opportunities per node.
    pub period: f64,
    /// Probability that a node starts a search at each opportunity.
    pub start_probability: f64,
    /// Each node's first opportunity is delayed by U(0, this).
    pub initial_delay_max: f64,
    pub snapshot_period: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            warmup: 200.0,
            eval_duration: 300.0,
            period: 30.0,
            start_probability: 0.8,
            initial_delay_max: 20.0,
            snapshot_period: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoClusterParams {
    pub bridge_length: f64,
    pub nodes_left: u32,
    pub nodes_right: u32,
    /// Distance from each bridge node to every other node of its cluster.
    pub radius: f64,
    /// Minimum horizontal clearance between a bridge node and its cluster.
    pub guard: f64,
    pub vertical_extent: f64,
}

impl Default for TwoClusterParams {
    fn default() -> Self {
        TwoClusterParams {
            bridge_length: 250.0,
            nodes_left: 10,
            nodes_right: 10,
            radius: 230.0,
            guard: 170.0,
            vertical_extent: 300.0,
        }
    }
}

fn geometric_graph(placement: &Placement, comm_range: f64) -> Graph {
    let n = placement.node_count();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if placement.distance(a, b) <= comm_range {
                edges.push(Edge::new(a, b));
            }
        }
    }
    Graph::new(n, edges).expect("endpoints in range by construction")
}

/// Uniform placements in a square, regenerated until the radio graph at
/// `comm_range` is a single component.
pub fn random_geometric(
    n: u32,
    area_side: f64,
    comm_range: f64,
    seed: u64,
) -> Result<(Graph, Placement), ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::BadParams("need at least one node".into()));
    }
    const RETRIES: u32 = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RETRIES {
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.0..area_side), rng.gen_range(0.0..area_side)))
            .collect();
        let placement = Placement { positions };
        let g = geometric_graph(&placement, comm_range);
        if g.is_connected() {
            return Ok((g, placement));
        }
    }
    Err(ScenarioError::RetriesExhausted(RETRIES))
}

/// Two clusters facing each other across a single bridge A–B (nodes 0 and
/// 1). Every other node sits at exactly `radius` from its bridge node, on
/// the far side of a guard line, within the vertical extent — so the
/// clusters cannot talk to each other directly.
pub fn two_cluster_bridge(
    p: &TwoClusterParams,
    comm_range: f64,
    seed: u64,
) -> Result<(Graph, Placement), ScenarioError> {
    if p.nodes_left < 1 || p.nodes_right < 1 {
        return Err(ScenarioError::BadParams("clusters need at least one node".into()));
    }
    if p.guard >= p.radius {
        return Err(ScenarioError::BadParams(format!(
            "guard distance {} must be below the cluster radius {}",
            p.guard, p.radius
        )));
    }
    let y_max = (p.vertical_extent / 2.0).min((p.radius.powi(2) - p.guard.powi(2)).sqrt());
    if !(y_max > 0.0) {
        return Err(ScenarioError::BadParams("empty placement arc".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = vec![(0.0, 0.0), (p.bridge_length, 0.0)];
    for _ in 0..(p.nodes_left - 1) {
        let y = rng.gen_range(-y_max..y_max);
        positions.push((-(p.radius.powi(2) - y * y).sqrt(), y));
    }
    for _ in 0..(p.nodes_right - 1) {
        let y = rng.gen_range(-y_max..y_max);
        positions.push((p.bridge_length + (p.radius.powi(2) - y * y).sqrt(), y));
    }
    let placement = Placement { positions };
    let g = geometric_graph(&placement, comm_range);
    Ok((g, placement))
}

/// Evenly spaced nodes on a circle, each linked to its two neighbors.
pub fn ring(n: u32, spacing: f64) -> Result<(Graph, Placement), ScenarioError> {
    if n < 3 {
        return Err(ScenarioError::BadParams("a ring needs at least 3 nodes".into()));
    }
    let r = spacing / (2.0 * (std::f64::consts::PI / n as f64).sin());
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let edges = (0..n).map(|i| Edge::new(i, (i + 1) % n));
    Ok((Graph::new(n, edges)?, Placement { positions }))
}

/// Evenly spaced nodes on a line.
pub fn line(n: u32, spacing: f64) -> Result<(Graph, Placement), ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::BadParams("need at least one node".into()));
    }
    let positions: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 * spacing, 0.0)).collect();
    let edges = (1..n).map(|i| Edge::new(i - 1, i));
    Ok((Graph::new(n, edges)?, Placement { positions }))
}

/// A detection protocol the schedule can drive.
pub trait Detector: Protocol + Sized {
    fn start(&mut self, engine: &mut Engine<Self::Msg, Self::Timer>, node: NodeId);
    /// Published verdicts (voted when the protocol is configured to vote).
    fn results(&self, node: NodeId) -> NodeResults;
    /// Raw last-search verdicts regardless of any voting rule.
    fn raw_results(&self, node: NodeId) -> NodeResults {
        self.results(node)
    }
    fn searches_started(&self) -> u64;
    fn searches_completed(&self) -> u64;
    fn take_statements(&mut self) -> Vec<StatementRecord> {
        Vec::new()
    }
    fn validate_channel(engine: &Engine<Self::Msg, Self::Timer>) -> Result<(), ScenarioError> {
        let _ = engine;
        Ok(())
    }
}

impl Detector for Dibadawn {
    fn start(&mut self, engine: &mut Engine<DibaMsg, DibaTimer>, node: NodeId) {
        self.start_search(engine, node);
    }

    fn results(&self, node: NodeId) -> NodeResults {
        self.query_results(node)
    }

    fn raw_results(&self, node: NodeId) -> NodeResults {
        self.query_results_with(node, None)
    }

    fn searches_started(&self) -> u64 {
        self.started_searches
    }

    fn searches_completed(&self) -> u64 {
        self.completed_searches
    }

    fn take_statements(&mut self) -> Vec<StatementRecord> {
        std::mem::take(&mut self.statement_log)
    }
}

impl Detector for Chaudhuri {
    fn start(&mut self, engine: &mut Engine<ChMsg, NoTimer>, node: NodeId) {
        self.start_run(engine, node);
    }

    fn results(&self, node: NodeId) -> NodeResults {
        NodeResults {
            bridges: Vec::new(),
            is_articulation: self.verdicts[node as usize].unwrap_or(false),
        }
    }

    fn searches_started(&self) -> u64 {
        self.tally.search // token passes, not runs; runs tracked separately
    }

    fn searches_completed(&self) -> u64 {
        self.completed_runs
    }

    fn validate_channel(engine: &Engine<ChMsg, NoTimer>) -> Result<(), ScenarioError> {
        ensure_reliable(engine)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CaptureOptions {
    /// Also capture raw (un-voted) snapshots next to the published ones.
    pub raw_snapshots: bool,
    pub event_log: bool,
}

enum Action {
    MaybeStart(NodeId),
    Snapshot(u32),
}

/// The (sequence number, time) grid of snapshots for a schedule: one per
/// `snapshot_period` throughout the evaluated phase.
pub fn snapshot_times(schedule: &ScheduleConfig) -> Vec<(u32, f64)> {
    let horizon = schedule.warmup + schedule.eval_duration;
    let mut out = Vec::new();
    let mut seq = 1u32;
    let mut t = schedule.warmup + schedule.snapshot_period;
    while t <= horizon + 1e-9 {
        out.push((seq, t));
        seq += 1;
        t += schedule.snapshot_period;
    }
    out
}

/// Drive one full experiment: periodic probabilistic search starts on every
/// node, snapshots during the evaluated phase, then a graceful drain so the
/// final executions complete.
pub fn run_schedule<P: Detector>(
    placement: Placement,
    channel: ChannelConfig,
    protocol: P,
    schedule: &ScheduleConfig,
    seed: u64,
    capture: &CaptureOptions,
) -> Result<RunArtifacts, ScenarioError> {
    let engine: Engine<P::Msg, P::Timer> =
        Engine::new(placement, channel, seed, capture.event_log)?;
    P::validate_channel(&engine)?;
    let n = engine.node_count();
    let mut sim = Sim::new(engine, protocol);

    let horizon = schedule.warmup + schedule.eval_duration;
    let mut timeline: Vec<(f64, u8, Action)> = Vec::new();
    for node in 0..n {
        let offset = sim.engine.rand_uniform(schedule.initial_delay_max);
        let mut t = offset;
        while t < horizon {
            timeline.push((t, 0, Action::MaybeStart(node)));
            t += schedule.period;
        }
    }
    for (seq, t) in snapshot_times(schedule) {
        timeline.push((t, 1, Action::Snapshot(seq)));
    }
    timeline.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| {
            let key = |x: &Action| match x {
                Action::MaybeStart(n) => *n,
                Action::Snapshot(s) => *s,
            };
            key(&a.2).cmp(&key(&b.2))
        })
    });

    let mut snapshots = Vec::new();
    let mut raw_snapshots = capture.raw_snapshots.then(Vec::new);
    for (t, _, action) in timeline {
        sim.run_until(t);
        match action {
            Action::MaybeStart(node) => {
                if sim.engine.rand_bool(schedule.start_probability) {
                    sim.protocol.start(&mut sim.engine, node);
                }
            }
            Action::Snapshot(seq) => {
                for node in 0..n {
                    snapshots.push(SnapshotRow {
                        seq,
                        node,
                        results: sim.protocol.results(node),
                    });
                    if let Some(raw) = &mut raw_snapshots {
                        raw.push(SnapshotRow {
                            seq,
                            node,
                            results: sim.protocol.raw_results(node),
                        });
                    }
                }
            }
        }
    }

    // Let in-flight executions finish; nothing new starts past the horizon.
    sim.run_until(horizon);
    sim.run_to_completion(horizon + 3600.0);

    let stats = RunStats {
        broadcasts: sim.engine.stats.broadcasts,
        unicast_sends: sim.engine.stats.unicast_sends,
        unicast_attempts: sim.engine.stats.unicast_attempts,
        unicast_failures: sim.engine.stats.unicast_failures,
        searches_started: sim.protocol.searches_started(),
        searches_completed: sim.protocol.searches_completed(),
        end_time: sim.engine.now(),
    };
    let statements = sim.protocol.take_statements();
    let event_log = capture.event_log.then(|| sim.engine.take_log());
    Ok(RunArtifacts {
        seed,
        node_count: n,
        snapshots,
        raw_snapshots,
        counters: sim.engine.counters.clone(),
        statements,
        stats,
        event_log,
    })
}

/// Outcome of a single isolated search, for trace tests and exactness
/// checks.
pub struct SingleSearch {
    pub results: Vec<NodeResults>,
    /// Forward broadcasts plus backward bundles of this search.
    pub transmissions: u64,
    pub reached: u64,
    pub protocol: Dibadawn,
    pub event_log: Vec<String>,
}

/// Run exactly one search on `g` from `initiator` over per-edge reliable
/// links, with optional scripted per-direction loss probabilities.
pub fn run_one_search(
    g: &Graph,
    initiator: NodeId,
    cfg: ProtocolConfig,
    loss_overrides: &[((NodeId, NodeId), f64)],
    seed: u64,
) -> Result<SingleSearch, ScenarioError> {
    let mut probs: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for e in g.edges() {
        let (a, b) = e.endpoints();
        probs.insert((a, b), 1.0);
        probs.insert((b, a), 1.0);
    }
    for &(pair, p) in loss_overrides {
        probs.insert(pair, p);
    }
    let placement = Placement {
        positions: g.nodes().map(|v| (v as f64, 0.0)).collect(),
    };
    let channel = ChannelConfig::loss_table(probs);
    let protocol = Dibadawn::new(cfg, g.node_count(), &channel);
    let engine = Engine::new(placement, channel, seed, true)?;
    let mut sim = Sim::new(engine, protocol);
    sim.protocol.start_search(&mut sim.engine, initiator);
    sim.run_to_completion(3600.0);

    let key = crate::protocol::ExplorerId {
        initiator,
        sequence: 0,
    }
    .key();
    let results = (0..g.node_count())
        .map(|v| sim.protocol.query_results_with(v, None))
        .collect();
    let transmissions = sim.protocol.search_transmissions.get(&key).copied().unwrap_or(0);
    let reached = sim.protocol.search_reached.get(&key).copied().unwrap_or(0);
    let event_log = sim.engine.take_log();
    Ok(SingleSearch {
        results,
        transmissions,
        reached,
        protocol: sim.protocol,
        event_log,
    })
}

/// Union of published bridge claims plus the set of self-declared
/// articulation points.
pub fn collect_claims(results: &[NodeResults]) -> (std::collections::BTreeSet<Edge>, std::collections::BTreeSet<NodeId>) {
    let mut bridges = std::collections::BTreeSet::new();
    let mut articulation = std::collections::BTreeSet::new();
    for (v, r) in results.iter().enumerate() {
        for e in &r.bridges {
            bridges.insert(*e);
        }
        if r.is_articulation {
            articulation.insert(v as NodeId);
        }
    }
    (bridges, articulation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::ShadowingParams;

    #[test]
    fn generators_are_deterministic() {
        let (g1, p1) = random_geometric(40, 1200.0, 400.0, 7).unwrap();
        let (g2, p2) = random_geometric(40, 1200.0, 400.0, 7).unwrap();
        assert_eq!(p1, p2);
        assert!(g1 == g2);
        let (_, p3) = random_geometric(40, 1200.0, 400.0, 8).unwrap();
        assert!(p1 != p3);
    }

    #[test]
    fn random_geometric_is_connected() {
        for seed in 0..5 {
            let (g, _) = random_geometric(60, 1500.0, 400.0, seed).unwrap();
            assert!(g.is_connected());
        }
    }

    #[test]
    fn trivial_topologies() {
        let (g, _) = random_geometric(1, 100.0, 50.0, 0).unwrap();
        assert_eq!(g.node_count(), 1);
        let (g, p) = random_geometric(2, 50.0, 400.0, 0).unwrap();
        assert!(g.is_connected());
        assert!(p.distance(0, 1) <= 400.0);
    }

    #[test]
    fn two_cluster_geometry_keeps_clusters_apart() {
        let params = TwoClusterParams::default();
        let (g, p) = two_cluster_bridge(&params, 400.0, 3).unwrap();
        let n = g.node_count();
        assert_eq!(n, 20);
        // Exact radius to the hub; beyond the guard line.
        for i in 2..(2 + params.nodes_left - 1) {
            assert!((p.distance(0, i) - params.radius).abs() < 1e-9);
            assert!(p.positions[i as usize].0 <= -params.guard + 1e-9);
        }
        // The only cross-cluster pair within range is the bridge itself.
        let left: Vec<NodeId> = std::iter::once(0)
            .chain(2..(1 + params.nodes_left))
            .collect();
        for &a in &left {
            for b in 0..n {
                if left.contains(&b) || (a, b) == (0, 1) {
                    continue;
                }
                assert!(
                    p.distance(a, b) > 400.0,
                    "cross pair {a}-{b} at {}",
                    p.distance(a, b)
                );
            }
        }
        assert!(g.has_edge(Edge::new(0, 1)));
    }

    #[test]
    fn two_cluster_minimal_is_just_the_bridge() {
        let params = TwoClusterParams {
            nodes_left: 1,
            nodes_right: 1,
            ..TwoClusterParams::default()
        };
        let (g, _) = two_cluster_bridge(&params, 400.0, 1).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn two_cluster_rejects_bad_guard() {
        let params = TwoClusterParams {
            guard: 300.0,
            radius: 230.0,
            ..TwoClusterParams::default()
        };
        assert!(two_cluster_bridge(&params, 400.0, 1).is_err());
    }

    #[test]
    fn ring_and_line_shapes() {
        let (g, p) = ring(21, 100.0).unwrap();
        assert_eq!(g.edge_count(), 21);
        assert!((p.distance(0, 1) - 100.0).abs() < 1e-9);
        // Second neighbors sit comfortably farther than adjacent ones.
        assert!(p.distance(0, 2) > 150.0);
        assert!(ring(2, 100.0).is_err());

        let (g, _) = line(3, 50.0).unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn schedule_without_starts_is_empty() {
        let (_, placement) = line(3, 50.0).unwrap();
        let channel = ChannelConfig::lossless(80.0);
        let protocol = Dibadawn::new(ProtocolConfig::default(), 3, &channel);
        let schedule = ScheduleConfig {
            warmup: 10.0,
            eval_duration: 20.0,
            period: 10.0,
            start_probability: 0.0,
            initial_delay_max: 5.0,
            snapshot_period: 10.0,
        };
        let run = run_schedule(
            placement,
            channel,
            protocol,
            &schedule,
            1,
            &CaptureOptions::default(),
        )
        .unwrap();
        assert_eq!(run.stats.searches_started, 0);
        assert!(run.snapshots.iter().all(|r| r.results.bridges.is_empty()));
        assert_eq!(run.snapshots.len(), 2 * 3); // two snapshots, three nodes
    }

    #[test]
    fn schedule_on_a_line_marks_every_edge() {
        let (_, placement) = line(3, 50.0).unwrap();
        let channel = ChannelConfig::lossless(80.0);
        let protocol = Dibadawn::new(ProtocolConfig::default(), 3, &channel);
        let schedule = ScheduleConfig {
            warmup: 30.0,
            eval_duration: 60.0,
            period: 15.0,
            start_probability: 1.0,
            initial_delay_max: 5.0,
            snapshot_period: 30.0,
        };
        let run = run_schedule(
            placement,
            channel,
            protocol,
            &schedule,
            2,
            &CaptureOptions::default(),
        )
        .unwrap();
        assert!(run.stats.searches_completed > 0);
        let last_seq = run.snapshots.iter().map(|r| r.seq).max().unwrap();
        let claims: Vec<&SnapshotRow> =
            run.snapshots.iter().filter(|r| r.seq == last_seq).collect();
        // Each path edge claimed by both endpoints; the middle node is the
        // lone articulation point.
        for e in [Edge::new(0, 1), Edge::new(1, 2)] {
            let (a, b) = e.endpoints();
            for node in [a, b] {
                assert!(
                    claims[node as usize].results.bridges.contains(&e),
                    "node {node} should claim {e}"
                );
            }
        }
        assert!(claims[1].results.is_articulation);
        assert!(!claims[0].results.is_articulation);
        // Everyone transmitted during warmup + eval.
        for v in 0..3 {
            assert!(run.counters.tx_count(v) > 0);
        }
    }

    #[test]
    fn chaudhuri_schedule_requires_reliable_links() {
        let (_, placement) = line(3, 300.0).unwrap();
        let channel = ChannelConfig::shadowing(ShadowingParams::default(), Some(400.0));
        let protocol = Chaudhuri::new(vec![vec![1], vec![0, 2], vec![1]]);
        let err = run_schedule(
            placement,
            channel,
            protocol,
            &ScheduleConfig::default(),
            1,
            &CaptureOptions::default(),
        );
        assert!(err.is_err());
    }
}

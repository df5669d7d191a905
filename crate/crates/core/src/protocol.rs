//! The per-node DIBADAWN protocol: explorer flooding in the forward phase,
//! a timer-coordinated backward phase carrying cycle and bridge messages
//! toward the initiator, articulation detection over the cycle relation,
//! and the per-edge statement store the statistics component votes over.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::graph::{Edge, NodeId};
use crate::sim::{ChannelConfig, Engine, Protocol, SimTime};
use crate::voting::{vote, RuleConfig, Statement, VoteRule};

/// Identity of one search: the initiating node plus a per-initiator counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExplorerId {
    pub initiator: NodeId,
    pub sequence: u32,
}

impl ExplorerId {
    pub fn key(&self) -> u64 {
        ((self.initiator as u64) << 32) | self.sequence as u64
    }
}

/// Order-independent cycle identity: the explorer key and both endpoint ids,
/// sorted ascending, so either endpoint of a cross edge derives the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CycleId([u64; 3]);

impl CycleId {
    pub fn new(explorer_key: u64, a: NodeId, b: NodeId) -> Self {
        let mut v = [explorer_key, a as u64, b as u64];
        v.sort_unstable();
        CycleId(v)
    }
}

/// Identity of a backward-phase message for the per-neighbor log. Bridge
/// markers are unique per originating node within one search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BackId {
    Cycle(CycleId),
    Marker(NodeId),
}

#[derive(Debug, Clone)]
pub struct ForwardMessage {
    pub explorer: ExplorerId,
    /// Remaining hop budget for receivers of this message.
    pub ttl: u32,
    pub forwarded_by: NodeId,
    /// The forwarder's own tree parent; receivers equal to it ignore the
    /// message (their own explorer echoed back).
    pub tree_parent: Option<NodeId>,
    /// Hop distance of the forwarder from the initiator.
    pub hops_traveled: u32,
    /// Forward jitter the sender consumed, for the receiver's min-delay.
    pub forwarder_jitter: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CycleItem {
    pub cycle: CycleId,
    /// Hops this item has traveled when it arrives (1 = from the detector).
    pub hops: u32,
}

#[derive(Debug, Clone)]
pub enum BackwardPayload {
    /// Bundled pending cycle items; one unicast per flush.
    Cycles(Vec<CycleItem>),
    /// The sender's outgoing buffer was empty: the edge to its parent is a
    /// bridge. Never forwarded further.
    BridgeMarker,
}

#[derive(Debug, Clone)]
pub struct BackwardMessage {
    pub search: ExplorerId,
    pub sender: NodeId,
    pub payload: BackwardPayload,
}

#[derive(Debug, Clone)]
pub enum DibaMsg {
    Forward(ForwardMessage),
    Backward(BackwardMessage),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum DibaTimer {
    /// Jittered re-broadcast of the explorer.
    Forward(ExplorerId),
    /// End of the forward phase at this node.
    Backward(ExplorerId),
    /// Jittered transmission of the outgoing buffer, then local wrap-up.
    Flush(ExplorerId),
}

/// Probability that a cycle message that traveled `hops` hops is correct.
/// The first two rows sit below the rest; the values are used verbatim.
pub fn competence(hops: u32) -> f64 {
    assert!(hops >= 1, "competence is defined for hops >= 1");
    const TABLE: [f64; 20] = [
        0.95, 0.90, 0.9954834, 0.9944834, 0.9932621, 0.9917703, 0.9899482, 0.9877227, 0.9850044,
        0.9816844, 0.9776292, 0.9726763, 0.9666267, 0.9592378, 0.9502129, 0.9391899, 0.9257264,
        0.9092820, 0.8891968, 0.8646647,
    ];
    if hops > 20 {
        0.85
    } else {
        TABLE[(hops - 1) as usize]
    }
}

/// Minimum wait before re-broadcasting a freshly received explorer, so that
/// every node of a hop group transmits inside its own hop window:
/// MaxTraversalTime − forwarder jitter − transmit time. Negative values
/// (misconfigured windows) clamp to zero.
pub fn forward_min_delay(forwarder_jitter: f64, max_traversal_time: f64, max_tx_time: f64) -> f64 {
    let d = max_traversal_time - forwarder_jitter - max_tx_time;
    if d < 0.0 {
        log::warn!(
            "negative min-delay ({d:.6}s) clamped to 0; jitter {forwarder_jitter:.6}s exceeds the hop window"
        );
        0.0
    } else {
        d
    }
}

/// Backward-phase timer: a node at `hop_distance` waits
/// (initial_ttl − hop_distance) hop windows, so farther nodes always fire
/// first and each parent has a full slot to hear its children.
pub fn compute_timeout(hop_distance: u32, initial_ttl: u32, hop_window: f64) -> f64 {
    assert!(hop_distance <= initial_ttl);
    (initial_ttl - hop_distance) as f64 * hop_window
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    /// Hop budget of a fresh search.
    pub initial_ttl: u32,
    /// Per-hop forwarding window, seconds.
    pub max_traversal_time: f64,
    /// jitterMax = max_traversal_time / jitter_divisor.
    pub jitter_divisor: f64,
    /// Extra per-hop slack for the backward unicast; derived from the
    /// channel when not set explicitly.
    pub backward_slot: Option<f64>,
    /// Statements kept per edge (and for self-as-articulation).
    pub history_window: usize,
    pub trust_threshold: f64,
    /// Voting rule for published verdicts; none = raw last-search results.
    pub rule: Option<VoteRule>,
    pub prior_bridge: Option<f64>,
    pub prior_articulation: Option<f64>,
    /// Ignore cross edges whose hop counts differ by more than one.
    pub asymmetric_guard: bool,
    /// Capture every statement for post-hoc re-scoring.
    pub log_statements: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            initial_ttl: 10,
            max_traversal_time: 0.056,
            jitter_divisor: 4.0,
            backward_slot: None,
            history_window: 5,
            trust_threshold: 0.9,
            rule: None,
            prior_bridge: None,
            prior_articulation: None,
            asymmetric_guard: true,
            log_statements: true,
        }
    }
}

impl ProtocolConfig {
    pub fn jitter_max(&self) -> f64 {
        self.max_traversal_time / self.jitter_divisor
    }

    /// Slot reserved per hop for the child's backward unicast: it must cover
    /// the flush jitter plus a full retry sequence, or children can flush
    /// after their parent under worst-case jitter.
    pub fn backward_slot(&self, channel: &ChannelConfig) -> f64 {
        self.backward_slot
            .unwrap_or(self.jitter_max() + channel.unicast_attempts as f64 * channel.max_tx_time)
    }

    pub fn hop_window(&self, channel: &ChannelConfig) -> f64 {
        self.max_traversal_time + self.backward_slot(channel)
    }

    pub fn rule_config(&self, scope: StatementScope) -> Option<RuleConfig> {
        self.rule.map(|rule| RuleConfig {
            rule,
            window: self.history_window,
            trust_threshold: self.trust_threshold,
            prior: match scope {
                StatementScope::Bridge => self.prior_bridge,
                StatementScope::Articulation => self.prior_articulation,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementScope {
    Bridge,
    Articulation,
}

/// Ring buffer of the last k statements per edge, plus the node's own
/// articulation history.
#[derive(Debug, Clone, Default)]
pub struct StatementStore {
    k: usize,
    edges: BTreeMap<NodeId, VecDeque<Statement>>,
    self_artic: VecDeque<Statement>,
}

impl StatementStore {
    fn new(k: usize) -> Self {
        StatementStore {
            k,
            ..Default::default()
        }
    }

    fn push_edge(&mut self, neighbor: NodeId, s: Statement) {
        let buf = self.edges.entry(neighbor).or_default();
        buf.push_back(s);
        while buf.len() > self.k {
            buf.pop_front();
        }
    }

    fn push_artic(&mut self, s: Statement) {
        self.self_artic.push_back(s);
        while self.self_artic.len() > self.k {
            self.self_artic.pop_front();
        }
    }

    pub fn edge_neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.keys().copied()
    }

    pub fn edge_window(&self, neighbor: NodeId) -> &[Statement] {
        self.edges
            .get(&neighbor)
            .map(|d| d.as_slices().0)
            .unwrap_or(&[])
    }

    fn edge_history(&self, neighbor: NodeId) -> Vec<Statement> {
        self.edges
            .get(&neighbor)
            .map(|d| d.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn articulation_history(&self) -> Vec<Statement> {
        self.self_artic.iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
struct BufferedItem {
    cycle: CycleId,
    /// Sender the item came from; `None` for this node's own detections
    /// (then `via` is the cross-edge neighbor).
    hops_received: Option<u32>,
    via: NodeId,
}

impl BufferedItem {
    fn hops_out(&self) -> u32 {
        match self.hops_received {
            Some(h) => h + 1,
            None => 1,
        }
    }

    fn competence_here(&self) -> f64 {
        match self.hops_received {
            Some(h) => competence(h),
            None => 1.0,
        }
    }
}

#[derive(Debug)]
struct SearchState {
    parent: Option<NodeId>,
    hop: u32,
    my_ttl: u32,
    pending_forward: Option<ForwardMessage>,
    /// Symmetric cross edges recorded in the forward phase.
    cross: Vec<(NodeId, CycleId)>,
    /// An asymmetric cross edge was observed: its cycle item is withheld and
    /// the bridge marker to the parent is suppressed with it.
    suppressed: bool,
    buffer: Vec<BufferedItem>,
    /// Per neighbor: ids of backward messages sent or received over that
    /// link (the raw material of the cycle relation).
    nlog: BTreeMap<NodeId, BTreeSet<BackId>>,
    /// This search's verdicts per neighbor edge: (is_bridge, competence).
    marks: BTreeMap<NodeId, (bool, f64)>,
    fired: bool,
}

impl SearchState {
    fn new(parent: Option<NodeId>, hop: u32, my_ttl: u32) -> Self {
        SearchState {
            parent,
            hop,
            my_ttl,
            pending_forward: None,
            cross: Vec::new(),
            suppressed: false,
            buffer: Vec::new(),
            nlog: BTreeMap::new(),
            marks: BTreeMap::new(),
            fired: false,
        }
    }

    fn log_against(&mut self, neighbor: NodeId, id: BackId) {
        self.nlog.entry(neighbor).or_default().insert(id);
    }

    fn mark(&mut self, neighbor: NodeId, bridge: bool, comp: f64) {
        match self.marks.entry(neighbor) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert((bridge, comp));
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let (b, c) = *e.get();
                if bridge == b {
                    e.insert((b, c.max(comp)));
                } else if bridge {
                    e.insert((true, comp));
                }
            }
        }
    }
}

struct NodeSlot {
    next_sequence: u32,
    active: BTreeMap<ExplorerId, SearchState>,
    store: StatementStore,
}

/// A statement as it was appended to some node's store, for artifact export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatementRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub subject: StatementSubject,
    pub positive: bool,
    pub competence: f64,
    pub search_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementSubject {
    Edge(NodeId),
    SelfArticulation,
}

/// Published verdicts of one node, as other applications would read them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeResults {
    pub bridges: Vec<Edge>,
    pub is_articulation: bool,
}

pub struct Dibadawn {
    pub cfg: ProtocolConfig,
    nodes: Vec<NodeSlot>,
    max_tx_time: f64,
    hop_window: f64,
    pub started_searches: u64,
    pub completed_searches: u64,
    /// Protocol transmissions (forward broadcasts + backward bundles) per
    /// search key.
    pub search_transmissions: BTreeMap<u64, u64>,
    /// Nodes reached per search key.
    pub search_reached: BTreeMap<u64, u64>,
    pub statement_log: Vec<StatementRecord>,
}

impl Dibadawn {
    pub fn new(cfg: ProtocolConfig, node_count: u32, channel: &ChannelConfig) -> Self {
        assert!(cfg.initial_ttl >= 1, "initial TTL must be at least 1");
        let nodes = (0..node_count)
            .map(|_| NodeSlot {
                next_sequence: 0,
                active: BTreeMap::new(),
                store: StatementStore::new(cfg.history_window),
            })
            .collect();
        let max_tx_time = channel.max_tx_time;
        let hop_window = cfg.hop_window(channel);
        Dibadawn {
            cfg,
            nodes,
            max_tx_time,
            hop_window,
            started_searches: 0,
            completed_searches: 0,
            search_transmissions: BTreeMap::new(),
            search_reached: BTreeMap::new(),
            statement_log: Vec::new(),
        }
    }

    fn count_tx(&mut self, search: ExplorerId) {
        *self.search_transmissions.entry(search.key()).or_insert(0) += 1;
    }

    fn count_reached(&mut self, search: ExplorerId) {
        *self.search_reached.entry(search.key()).or_insert(0) += 1;
    }

    /// Begin a new search at `node`: mark it visited at hop 0, broadcast the
    /// explorer, and arm the full-duration timer.
    pub fn start_search(&mut self, engine: &mut Engine<DibaMsg, DibaTimer>, node: NodeId) {
        let sequence = self.nodes[node as usize].next_sequence;
        self.nodes[node as usize].next_sequence += 1;
        let explorer = ExplorerId {
            initiator: node,
            sequence,
        };
        self.started_searches += 1;
        self.count_reached(explorer);

        let my_ttl = self.cfg.initial_ttl;
        let st = SearchState::new(None, 0, my_ttl);
        self.nodes[node as usize].active.insert(explorer, st);

        let msg = ForwardMessage {
            explorer,
            ttl: my_ttl - 1,
            forwarded_by: node,
            tree_parent: None,
            hops_traveled: 0,
            forwarder_jitter: 0.0,
        };
        engine.broadcast(node, DibaMsg::Forward(msg));
        self.count_tx(explorer);

        let duration = compute_timeout(0, self.cfg.initial_ttl, self.hop_window);
        engine.set_timer(node, duration, DibaTimer::Backward(explorer));
    }

    fn handle_forward(
        &mut self,
        engine: &mut Engine<DibaMsg, DibaTimer>,
        node: NodeId,
        msg: ForwardMessage,
    ) {
        let explorer = msg.explorer;
        if !self.nodes[node as usize].active.contains_key(&explorer) {
            // Case a: this explorer is new here. Adopt the sender as parent,
            // arm the backward timer, and schedule the re-broadcast.
            let hop = msg.hops_traveled + 1;
            let my_ttl = msg.ttl;
            debug_assert_eq!(hop + my_ttl, self.cfg.initial_ttl);
            self.count_reached(explorer);

            let mut st = SearchState::new(Some(msg.forwarded_by), hop, my_ttl);

            // Measure the timer from the hop-window origin rather than the
            // jittered receipt instant, so backward slots stay aligned
            // across hop groups regardless of jitter draws.
            let window_slack =
                (self.max_tx_time + msg.forwarder_jitter).min(self.cfg.max_traversal_time);
            let timeout = (self.cfg.max_traversal_time - window_slack)
                + compute_timeout(hop, self.cfg.initial_ttl, self.hop_window);
            engine.set_timer(node, timeout, DibaTimer::Backward(explorer));

            if my_ttl > 0 {
                let own_jitter = engine.rand_uniform(self.cfg.jitter_max());
                let min_delay =
                    forward_min_delay(msg.forwarder_jitter, self.cfg.max_traversal_time, self.max_tx_time);
                st.pending_forward = Some(ForwardMessage {
                    explorer,
                    ttl: my_ttl - 1,
                    forwarded_by: node,
                    tree_parent: Some(msg.forwarded_by),
                    hops_traveled: hop,
                    forwarder_jitter: own_jitter,
                });
                engine.set_timer(node, min_delay + own_jitter, DibaTimer::Forward(explorer));
            }
            self.nodes[node as usize].active.insert(explorer, st);
            return;
        }

        let st = self.nodes[node as usize].active.get_mut(&explorer).unwrap();
        if msg.tree_parent == Some(node) {
            // Case b: our own explorer echoed back by a child.
            return;
        }

        // Case c: a cross edge toward the forwarder.
        let cid = CycleId::new(explorer.key(), node, msg.forwarded_by);
        let hop_mismatch = (st.hop as i64 - msg.hops_traveled as i64).unsigned_abs();
        if hop_mismatch > 1 && self.cfg.asymmetric_guard {
            // Asymmetric cross edge: the link is known (it feeds the cycle
            // relation) but its cycle item is withheld, and with it the
            // bridge marker to the parent.
            st.suppressed = true;
            st.log_against(msg.forwarded_by, BackId::Cycle(cid));
            log::debug!(
                "node {node}: asymmetric cross edge to {} (hops {} vs {})",
                msg.forwarded_by,
                st.hop,
                msg.hops_traveled
            );
        } else if !st.fired {
            st.cross.push((msg.forwarded_by, cid));
            st.log_against(msg.forwarded_by, BackId::Cycle(cid));
        } else {
            // Forward phase already over here; keep the link knowledge only.
            st.log_against(msg.forwarded_by, BackId::Cycle(cid));
        }
    }

    /// Turn recorded cross edges into buffered cycle items (eliminating
    /// against anything a child already sent up) and mark the cross edges
    /// as non-bridges.
    fn detect_cycles(st: &mut SearchState) {
        let cross = std::mem::take(&mut st.cross);
        for (neighbor, cid) in cross {
            st.mark(neighbor, false, 1.0);
            if let Some(pos) = st.buffer.iter().position(|b| b.cycle == cid) {
                let matched = st.buffer.remove(pos);
                st.mark(matched.via, false, matched.competence_here());
            } else {
                st.buffer.push(BufferedItem {
                    cycle: cid,
                    hops_received: None,
                    via: neighbor,
                });
            }
        }
    }

    fn handle_backward(
        &mut self,
        _engine: &mut Engine<DibaMsg, DibaTimer>,
        node: NodeId,
        msg: BackwardMessage,
    ) {
        let Some(st) = self.nodes[node as usize].active.get_mut(&msg.search) else {
            log::debug!(
                "node {node}: backward message for unknown search {:?} dropped",
                msg.search
            );
            return;
        };
        match msg.payload {
            BackwardPayload::BridgeMarker => {
                st.log_against(msg.sender, BackId::Marker(msg.sender));
                st.mark(msg.sender, true, 1.0);
            }
            BackwardPayload::Cycles(items) => {
                for item in items {
                    st.log_against(msg.sender, BackId::Cycle(item.cycle));
                    if let Some(pos) = st.buffer.iter().position(|b| b.cycle == item.cycle) {
                        // Both instances met: this node is the common
                        // ancestor. The links to both senders lie on the
                        // cycle.
                        let matched = st.buffer.remove(pos);
                        st.mark(msg.sender, false, competence(item.hops));
                        st.mark(matched.via, false, matched.competence_here());
                    } else {
                        st.buffer.push(BufferedItem {
                            cycle: item.cycle,
                            hops_received: Some(item.hops),
                            via: msg.sender,
                        });
                    }
                }
            }
        }
    }

    /// Number of equivalence classes of the transitively closed cycle
    /// relation over this node's participating links.
    fn articulation_classes(nlog: &BTreeMap<NodeId, BTreeSet<BackId>>) -> usize {
        let neighbors: Vec<&BTreeSet<BackId>> =
            nlog.values().filter(|s| !s.is_empty()).collect();
        let n = neighbors.len();
        let mut root: Vec<usize> = (0..n).collect();
        fn find(root: &mut Vec<usize>, mut i: usize) -> usize {
            while root[i] != i {
                root[i] = root[root[i]];
                i = root[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if !neighbors[i].is_disjoint(neighbors[j]) {
                    let (a, b) = (find(&mut root, i), find(&mut root, j));
                    if a != b {
                        root[a] = b;
                    }
                }
            }
        }
        (0..n).map(|i| find(&mut root, i)).collect::<BTreeSet<_>>().len()
    }

    fn handle_flush(
        &mut self,
        engine: &mut Engine<DibaMsg, DibaTimer>,
        node: NodeId,
        explorer: ExplorerId,
    ) {
        let Some(mut st) = self.nodes[node as usize].active.remove(&explorer) else {
            return;
        };
        let now = engine.now();

        // Send the buffer to the parent, bundled; an empty buffer means the
        // parent link is a bridge, unless an asymmetric cross edge poisoned
        // this node's view.
        if let Some(parent) = st.parent {
            if !st.buffer.is_empty() {
                let items: Vec<CycleItem> = st
                    .buffer
                    .iter()
                    .map(|b| CycleItem {
                        cycle: b.cycle,
                        hops: b.hops_out(),
                    })
                    .collect();
                for b in &st.buffer {
                    st.nlog
                        .entry(parent)
                        .or_default()
                        .insert(BackId::Cycle(b.cycle));
                }
                engine.unicast(
                    node,
                    parent,
                    DibaMsg::Backward(BackwardMessage {
                        search: explorer,
                        sender: node,
                        payload: BackwardPayload::Cycles(items),
                    }),
                );
                self.count_tx(explorer);
            } else if !st.suppressed {
                st.mark(parent, true, 1.0);
                st.log_against(parent, BackId::Marker(node));
                engine.unicast(
                    node,
                    parent,
                    DibaMsg::Backward(BackwardMessage {
                        search: explorer,
                        sender: node,
                        payload: BackwardPayload::BridgeMarker,
                    }),
                );
                self.count_tx(explorer);
            } else {
                log::debug!("node {node}: bridge marker withheld (asymmetric cross edge)");
            }
        }

        let is_articulation = Self::articulation_classes(&st.nlog) >= 2;

        // Collapse this search's markings into statements, fill the gaps
        // with implicit non-bridge statements (stale decisions decay), and
        // record the articulation verdict.
        let search_key = explorer.key();
        let slot = &mut self.nodes[node as usize];
        let touched: Vec<(NodeId, (bool, f64))> =
            st.marks.iter().map(|(&n, &v)| (n, v)).collect();
        let touched_set: BTreeSet<NodeId> = touched.iter().map(|(n, _)| *n).collect();
        let stale: Vec<NodeId> = slot
            .store
            .edge_neighbors()
            .filter(|n| !touched_set.contains(n))
            .collect();

        let mut records = Vec::new();
        for (neighbor, (bridge, comp)) in touched {
            let s = Statement {
                positive: bridge,
                competence: comp,
                search_key,
                time: now,
            };
            slot.store.push_edge(neighbor, s);
            records.push(StatementRecord {
                time: now,
                node,
                subject: StatementSubject::Edge(neighbor),
                positive: bridge,
                competence: comp,
                search_key,
            });
        }
        for neighbor in stale {
            let s = Statement {
                positive: false,
                competence: 1.0,
                search_key,
                time: now,
            };
            slot.store.push_edge(neighbor, s);
            records.push(StatementRecord {
                time: now,
                node,
                subject: StatementSubject::Edge(neighbor),
                positive: false,
                competence: 1.0,
                search_key,
            });
        }
        slot.store.push_artic(Statement {
            positive: is_articulation,
            competence: 1.0,
            search_key,
            time: now,
        });
        records.push(StatementRecord {
            time: now,
            node,
            subject: StatementSubject::SelfArticulation,
            positive: is_articulation,
            competence: 1.0,
            search_key,
        });
        if self.cfg.log_statements {
            self.statement_log.extend(records);
        }
        self.completed_searches += 1;
    }

    /// Currently published verdicts for `node`: raw last-search results, or
    /// voted ones when a rule is configured.
    pub fn query_results(&self, node: NodeId) -> NodeResults {
        self.query_results_with(node, self.cfg.rule)
    }

    /// Published verdicts under an explicit rule choice (`None` = raw).
    pub fn query_results_with(&self, node: NodeId, rule: Option<VoteRule>) -> NodeResults {
        let store = &self.nodes[node as usize].store;
        let mut cfg = rule.map(|r| RuleConfig {
            rule: r,
            window: self.cfg.history_window,
            trust_threshold: self.cfg.trust_threshold,
            prior: self.cfg.prior_bridge,
        });
        let mut bridges = Vec::new();
        for neighbor in store.edge_neighbors() {
            let history = store.edge_history(neighbor);
            let claim = match &cfg {
                None => history.last().map(|s| s.positive).unwrap_or(false),
                Some(rc) => vote(&history, rc).unwrap_or(false),
            };
            if claim {
                bridges.push(Edge::new(node, neighbor));
            }
        }
        if let Some(rc) = &mut cfg {
            rc.prior = self.cfg.prior_articulation;
        }
        let artic_history = store.articulation_history();
        let is_articulation = match &cfg {
            None => artic_history.last().map(|s| s.positive).unwrap_or(false),
            Some(rc) => {
                if artic_history.is_empty() {
                    false
                } else {
                    vote(&artic_history, rc).unwrap_or(false)
                }
            }
        };
        NodeResults {
            bridges,
            is_articulation,
        }
    }

    pub fn store(&self, node: NodeId) -> &StatementStore {
        &self.nodes[node as usize].store
    }
}

impl Protocol for Dibadawn {
    type Msg = DibaMsg;
    type Timer = DibaTimer;

    fn on_deliver(
        &mut self,
        engine: &mut Engine<DibaMsg, DibaTimer>,
        to: NodeId,
        _from: NodeId,
        msg: DibaMsg,
    ) {
        match msg {
            DibaMsg::Forward(m) => self.handle_forward(engine, to, m),
            DibaMsg::Backward(m) => self.handle_backward(engine, to, m),
        }
    }

    fn on_timer(&mut self, engine: &mut Engine<DibaMsg, DibaTimer>, node: NodeId, tag: DibaTimer) {
        match tag {
            DibaTimer::Forward(explorer) => {
                let pending = self.nodes[node as usize]
                    .active
                    .get_mut(&explorer)
                    .filter(|st| st.my_ttl > 0)
                    .and_then(|st| st.pending_forward.take());
                if let Some(msg) = pending {
                    engine.broadcast(node, DibaMsg::Forward(msg));
                    self.count_tx(explorer);
                }
            }
            DibaTimer::Backward(explorer) => {
                let jitter_max = self.cfg.jitter_max();
                if let Some(st) = self.nodes[node as usize].active.get_mut(&explorer) {
                    st.fired = true;
                    Self::detect_cycles(st);
                    let flush_jitter = engine.rand_uniform(jitter_max);
                    engine.set_timer(node, flush_jitter, DibaTimer::Flush(explorer));
                }
            }
            DibaTimer::Flush(explorer) => self.handle_flush(engine, node, explorer),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn competence_table_lookups() {
        assert_relative_eq!(competence(1), 0.95);
        assert_relative_eq!(competence(2), 0.90);
        assert_relative_eq!(competence(13), 0.9666267);
        assert_relative_eq!(competence(20), 0.8646647);
        assert_relative_eq!(competence(21), 0.85);
        assert_relative_eq!(competence(100), 0.85);
    }

    #[test]
    #[should_panic]
    fn competence_rejects_zero_hops() {
        competence(0);
    }

    #[test]
    fn min_delay_arithmetic() {
        // MTT 56 ms, tx 2 ms.
        assert_relative_eq!(forward_min_delay(0.0, 0.056, 0.002), 0.054);
        assert_relative_eq!(forward_min_delay(0.014, 0.056, 0.002), 0.040);
        // Oversized jitter clamps.
        assert_relative_eq!(forward_min_delay(0.1, 0.056, 0.002), 0.0);
    }

    #[test]
    fn timeout_is_monotone_in_hop() {
        let w = 0.084;
        assert_relative_eq!(compute_timeout(10, 10, w), 0.0);
        let mut last = f64::INFINITY;
        for hop in 0..=10 {
            let d = compute_timeout(hop, 10, w);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn cycle_id_is_order_independent() {
        let k = ExplorerId {
            initiator: 7,
            sequence: 3,
        }
        .key();
        assert_eq!(CycleId::new(k, 2, 9), CycleId::new(k, 9, 2));
        assert_ne!(CycleId::new(k, 2, 9), CycleId::new(k, 2, 8));
    }

    #[test]
    fn statement_store_evicts_oldest() {
        let mut store = StatementStore::new(3);
        for i in 0..5 {
            store.push_edge(
                1,
                Statement {
                    positive: i == 0,
                    competence: 1.0,
                    search_key: i,
                    time: i as f64,
                },
            );
        }
        let hist = store.edge_history(1);
        assert_eq!(hist.len(), 3);
        assert!(hist.iter().all(|s| !s.positive)); // the old positive evicted
        assert_eq!(hist[0].search_key, 2);
    }

    #[test]
    fn articulation_classes_from_logs() {
        // Two links sharing a cycle id, one lone marker link: two classes.
        let k = ExplorerId {
            initiator: 0,
            sequence: 0,
        }
        .key();
        let cid = CycleId::new(k, 1, 2);
        let mut nlog: BTreeMap<NodeId, BTreeSet<BackId>> = BTreeMap::new();
        nlog.entry(1).or_default().insert(BackId::Cycle(cid));
        nlog.entry(2).or_default().insert(BackId::Cycle(cid));
        nlog.entry(3).or_default().insert(BackId::Marker(3));
        assert_eq!(Dibadawn::articulation_classes(&nlog), 2);

        // All three linked transitively: one class.
        let cid2 = CycleId::new(k, 2, 3);
        nlog.entry(2).or_default().insert(BackId::Cycle(cid2));
        nlog.entry(3).or_default().insert(BackId::Cycle(cid2));
        assert_eq!(Dibadawn::articulation_classes(&nlog), 1);

        let empty: BTreeMap<NodeId, BTreeSet<BackId>> = BTreeMap::new();
        assert_eq!(Dibadawn::articulation_classes(&empty), 0);
    }
}

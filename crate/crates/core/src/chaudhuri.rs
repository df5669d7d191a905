//! Distributed articulation-point detection over reliable links: a
//! sequential DFS token builds the spanning tree, a TERMINATE wave flows
//! down it, and a NONTREE wave carries cross-link sets from the leaves back
//! to the root. Serves as a comparison baseline for the flooding protocol
//! and exercises the simulator's unicast layer.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{Edge, Graph, NodeId};
use crate::sim::{Engine, Placement, Protocol};
use crate::sim::ChannelConfig;

#[derive(Debug, Error)]
pub enum ChaudhuriError {
    #[error("the algorithm assumes error-free links; configure a lossless channel")]
    UnreliableChannel,
    #[error("root {0} outside node range 0..{1}")]
    BadRoot(NodeId, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunId {
    pub root: NodeId,
    pub sequence: u32,
}

#[derive(Debug, Clone)]
pub enum ChMsg {
    /// DFS token carrying the set of visited nodes.
    Search {
        run: RunId,
        visited: BTreeSet<NodeId>,
    },
    Terminate {
        run: RunId,
    },
    /// Leaf-to-root wave carrying cross-link sets.
    Nontree {
        run: RunId,
        links: BTreeSet<Edge>,
    },
}

/// The token protocol needs no timers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoTimer {}

#[derive(Debug, Default)]
struct RunState {
    parent: Option<NodeId>,
    children: BTreeSet<NodeId>,
    pending: BTreeSet<NodeId>,
    cross: BTreeSet<Edge>,
    collected: BTreeSet<Edge>,
    visited_before: BTreeSet<NodeId>,
    subtree: BTreeSet<NodeId>,
    is_articulation: bool,
}

struct NodeSlot {
    next_sequence: u32,
    runs: BTreeMap<RunId, RunState>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageTally {
    pub search: u64,
    pub terminate: u64,
    pub nontree: u64,
}

impl MessageTally {
    pub fn total(&self) -> u64 {
        self.search + self.terminate + self.nontree
    }
}

pub struct Chaudhuri {
    /// Known neighbor sets (the algorithm's stated assumption).
    neighbors: Vec<Vec<NodeId>>,
    nodes: Vec<NodeSlot>,
    /// Latest articulation verdict per node, refreshed as runs finish.
    pub verdicts: Vec<Option<bool>>,
    pub tally: MessageTally,
    pub completed_runs: u64,
}

impl Chaudhuri {
    pub fn new(neighbors: Vec<Vec<NodeId>>) -> Self {
        let n = neighbors.len();
        Chaudhuri {
            neighbors,
            nodes: (0..n)
                .map(|_| NodeSlot {
                    next_sequence: 0,
                    runs: BTreeMap::new(),
                })
                .collect(),
            verdicts: vec![None; n],
            tally: MessageTally::default(),
            completed_runs: 0,
        }
    }

    pub fn from_graph(g: &Graph) -> Self {
        Chaudhuri::new(g.nodes().map(|v| g.neighbors(v).to_vec()).collect())
    }

    /// Neighbor sets from the engine's own reachability (for placed nodes
    /// under a lossless channel).
    pub fn from_engine(engine: &Engine<ChMsg, NoTimer>) -> Result<Self, ChaudhuriError> {
        ensure_reliable(engine)?;
        let n = engine.node_count();
        Ok(Chaudhuri::new(
            (0..n)
                .map(|v| engine.reachable(v).iter().map(|(id, _)| *id).collect())
                .collect(),
        ))
    }

    pub fn start_run(&mut self, engine: &mut Engine<ChMsg, NoTimer>, root: NodeId) {
        let sequence = self.nodes[root as usize].next_sequence;
        self.nodes[root as usize].next_sequence += 1;
        let run = RunId { root, sequence };
        let mut visited = BTreeSet::new();
        visited.insert(root);
        let state = RunState::default();
        self.nodes[root as usize].runs.insert(run, state);
        self.continue_dfs(engine, root, run, visited);
    }

    fn next_unvisited(&self, node: NodeId, visited: &BTreeSet<NodeId>) -> Option<NodeId> {
        self.neighbors[node as usize]
            .iter()
            .copied()
            .find(|w| !visited.contains(w))
    }

    /// Either descend into the next unvisited neighbor, or—with nothing
    /// left—record cross links and hand the token back (or, at the root,
    /// declare the tree complete and start the TERMINATE wave).
    fn continue_dfs(
        &mut self,
        engine: &mut Engine<ChMsg, NoTimer>,
        node: NodeId,
        run: RunId,
        visited: BTreeSet<NodeId>,
    ) {
        if let Some(w) = self.next_unvisited(node, &visited) {
            let st = self.nodes[node as usize].runs.get_mut(&run).unwrap();
            st.children.insert(w);
            st.pending.insert(w);
            self.tally.search += 1;
            engine.unicast(node, w, ChMsg::Search { run, visited });
            return;
        }

        let neighbors = self.neighbors[node as usize].clone();
        let st = self.nodes[node as usize].runs.get_mut(&run).unwrap();
        if let Some(parent) = st.parent {
            st.cross = neighbors
                .iter()
                .filter(|&&nb| nb != parent && !st.children.contains(&nb))
                .map(|&nb| Edge::new(node, nb))
                .collect();
            st.subtree = visited
                .difference(&st.visited_before)
                .copied()
                .collect();
            self.tally.search += 1;
            engine.unicast(node, parent, ChMsg::Search { run, visited });
        } else {
            // Root: spanning tree found. The root's verdict needs only its
            // child count.
            st.subtree = visited;
            st.is_articulation = st.children.len() >= 2;
            let children: Vec<NodeId> = st.children.iter().copied().collect();
            if children.is_empty() {
                self.finish(node, run);
                return;
            }
            for c in children {
                self.tally.terminate += 1;
                engine.unicast(node, c, ChMsg::Terminate { run });
            }
        }
    }

    fn handle_search(
        &mut self,
        engine: &mut Engine<ChMsg, NoTimer>,
        node: NodeId,
        from: NodeId,
        run: RunId,
        mut visited: BTreeSet<NodeId>,
    ) {
        if !self.nodes[node as usize].runs.contains_key(&run) {
            // First visit: adopt the sender as parent.
            let mut st = RunState::default();
            st.parent = Some(from);
            st.visited_before = visited.clone();
            self.nodes[node as usize].runs.insert(run, st);
            visited.insert(node);
        }
        self.continue_dfs(engine, node, run, visited);
    }

    fn handle_terminate(&mut self, engine: &mut Engine<ChMsg, NoTimer>, node: NodeId, run: RunId) {
        let st = match self.nodes[node as usize].runs.get(&run) {
            Some(st) => st,
            None => return,
        };
        let children: Vec<NodeId> = st.children.iter().copied().collect();
        if children.is_empty() {
            self.send_nontree(engine, node, run);
        } else {
            for c in children {
                self.tally.terminate += 1;
                engine.unicast(node, c, ChMsg::Terminate { run });
            }
        }
    }

    /// Forward the links that leave this node's finished subtree; links
    /// fully inside it say nothing about nodes above.
    fn send_nontree(&mut self, engine: &mut Engine<ChMsg, NoTimer>, node: NodeId, run: RunId) {
        let st = self.nodes[node as usize].runs.get(&run).unwrap();
        let parent = st.parent.expect("only non-roots send NONTREE");
        let links: BTreeSet<Edge> = st
            .cross
            .union(&st.collected)
            .filter(|e| {
                let (a, b) = e.endpoints();
                !(st.subtree.contains(&a) && st.subtree.contains(&b))
            })
            .copied()
            .collect();
        self.tally.nontree += 1;
        engine.unicast(node, parent, ChMsg::Nontree { run, links });
        self.finish(node, run);
    }

    fn handle_nontree(
        &mut self,
        engine: &mut Engine<ChMsg, NoTimer>,
        node: NodeId,
        from: NodeId,
        run: RunId,
        links: BTreeSet<Edge>,
    ) {
        let st = match self.nodes[node as usize].runs.get_mut(&run) {
            Some(st) => st,
            None => return,
        };
        // A child subtree whose links all stop here (or that has none at
        // all) hangs off this node alone. The root's verdict comes from its
        // child count instead.
        if st.parent.is_some() && (links.is_empty() || links.iter().all(|e| e.touches(node))) {
            st.is_articulation = true;
        }
        st.collected.extend(links);
        st.pending.remove(&from);
        if st.pending.is_empty() {
            if st.parent.is_some() {
                self.send_nontree(engine, node, run);
            } else {
                self.finish(node, run);
            }
        }
    }

    fn finish(&mut self, node: NodeId, run: RunId) {
        if let Some(st) = self.nodes[node as usize].runs.remove(&run) {
            self.verdicts[node as usize] = Some(st.is_articulation);
            self.completed_runs += 1;
        }
    }
}

impl Protocol for Chaudhuri {
    type Msg = ChMsg;
    type Timer = NoTimer;

    fn on_deliver(
        &mut self,
        engine: &mut Engine<ChMsg, NoTimer>,
        to: NodeId,
        from: NodeId,
        msg: ChMsg,
    ) {
        match msg {
            ChMsg::Search { run, visited } => self.handle_search(engine, to, from, run, visited),
            ChMsg::Terminate { run } => self.handle_terminate(engine, to, run),
            ChMsg::Nontree { run, links } => self.handle_nontree(engine, to, from, run, links),
        }
    }

    fn on_timer(&mut self, _engine: &mut Engine<ChMsg, NoTimer>, _node: NodeId, tag: NoTimer) {
        match tag {}
    }
}

/// Every configured link must be loss-free.
pub fn ensure_reliable<M: Clone + std::fmt::Debug, T: Ord + Clone + std::fmt::Debug>(
    engine: &Engine<M, T>,
) -> Result<(), ChaudhuriError> {
    for v in 0..engine.node_count() {
        if engine.reachable(v).iter().any(|(_, p)| *p < 1.0) {
            return Err(ChaudhuriError::UnreliableChannel);
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct BaselineOutcome {
    /// Articulation verdict per node; `None` for nodes the run never reached.
    pub verdicts: Vec<Option<bool>>,
    pub tally: MessageTally,
}

/// One full run on `g` rooted at `root` over a perfectly reliable channel.
pub fn run_baseline(g: &Graph, root: NodeId, seed: u64) -> Result<BaselineOutcome, ChaudhuriError> {
    if root >= g.node_count() {
        return Err(ChaudhuriError::BadRoot(root, g.node_count()));
    }
    let mut probs = BTreeMap::new();
    for e in g.edges() {
        let (a, b) = e.endpoints();
        probs.insert((a, b), 1.0);
        probs.insert((b, a), 1.0);
    }
    let placement = Placement {
        positions: g.nodes().map(|v| (v as f64, 0.0)).collect(),
    };
    let engine = Engine::new(placement, ChannelConfig::loss_table(probs), seed, false)
        .expect("valid placement");
    ensure_reliable(&engine)?;
    let mut sim = crate::sim::Sim::new(engine, Chaudhuri::from_graph(g));
    sim.protocol.start_run(&mut sim.engine, root);
    sim.run_to_completion(1e6);
    Ok(BaselineOutcome {
        verdicts: sim.protocol.verdicts.clone(),
        tally: sim.protocol.tally,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{tarjan_report, Graph};

    fn graph(n: u32, edges: &[(u32, u32)]) -> Graph {
        Graph::new(n, edges.iter().map(|&(a, b)| Edge::new(a, b))).unwrap()
    }

    fn articulation_set(out: &BaselineOutcome) -> BTreeSet<NodeId> {
        out.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == Some(true))
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    #[test]
    fn path_middle_is_articulation() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let out = run_baseline(&g, 0, 1).unwrap();
        assert_eq!(articulation_set(&out), BTreeSet::from([1]));
    }

    #[test]
    fn four_cycle_has_none() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        for root in 0..4 {
            let out = run_baseline(&g, root, 5).unwrap();
            assert!(articulation_set(&out).is_empty(), "root {root}");
        }
    }

    #[test]
    fn shared_vertex_of_two_triangles() {
        // Triangles 0-1-2 and 2-3-4 share node 2.
        let g = graph(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4)]);
        for root in 0..5 {
            let out = run_baseline(&g, root, 11).unwrap();
            assert_eq!(
                articulation_set(&out),
                BTreeSet::from([2]),
                "root {root}"
            );
        }
    }

    #[test]
    fn back_edges_above_do_not_fool_it() {
        // 0-1, 1-2, 2-3, 3-4, 4-2 (cycle 2-3-4), 4-0: node 2 sits on a
        // cycle with an escape above it, so only 1 cuts.
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 2), (4, 0)]);
        let expected = tarjan_report(&g).articulation_points;
        for root in 0..5 {
            let out = run_baseline(&g, root, 3).unwrap();
            assert_eq!(articulation_set(&out), expected, "root {root}");
        }
    }

    #[test]
    fn message_count_is_linear() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)]);
        let out = run_baseline(&g, 0, 9).unwrap();
        let n = g.node_count() as u64;
        // Token down+up each tree edge, terminate and nontree once per
        // non-root: 4(n-1) messages total.
        assert_eq!(out.tally.total(), 4 * (n - 1));
    }

    #[test]
    fn root_rule_uses_child_count() {
        // Star: center is an articulation point from the root position too.
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let out = run_baseline(&g, 0, 2).unwrap();
        assert_eq!(articulation_set(&out), BTreeSet::from([0]));
        let out = run_baseline(&g, 1, 2).unwrap();
        assert_eq!(articulation_set(&out), BTreeSet::from([0]));
    }

    #[test]
    fn refuses_lossy_channel() {
        let placement = Placement {
            positions: vec![(0.0, 0.0), (350.0, 0.0)],
        };
        let channel = ChannelConfig::shadowing(crate::radio::ShadowingParams::default(), None);
        let engine: Engine<ChMsg, NoTimer> = Engine::new(placement, channel, 1, false).unwrap();
        assert!(matches!(
            Chaudhuri::from_engine(&engine),
            Err(ChaudhuriError::UnreliableChannel)
        ));
    }
}

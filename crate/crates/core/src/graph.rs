//! Undirected graphs plus the exact bridge/articulation-point oracles used as
//! ground truth throughout the crate.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Node identifier. Ids are dense non-negative integers assigned at graph
/// construction; all iteration is in ascending id order so results are
/// reproducible.
pub type NodeId = u32;

/// An undirected edge, stored with its endpoints in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(NodeId, NodeId);

impl Edge {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        assert_ne!(a, b, "self-loops are not allowed");
        if a < b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.0, self.1)
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.0 {
            self.1
        } else {
            self.0
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.0 == n || self.1 == n
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {0} references node outside 0..{1}")]
    NodeOutOfRange(Edge, u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected simple graph over the node set `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: u32,
    edges: BTreeSet<Edge>,
    adj: Vec<Vec<NodeId>>,
}

impl Graph {
    pub fn new(n: u32, edges: impl IntoIterator<Item = Edge>) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for e in edges {
            if e.0 >= n || e.1 >= n {
                return Err(GraphError::NodeOutOfRange(e, n));
            }
            set.insert(e);
        }
        let mut adj = vec![Vec::new(); n as usize];
        for e in &set {
            adj[e.0 as usize].push(e.1);
            adj[e.1 as usize].push(e.0);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        Ok(Graph { n, edges: set, adj })
    }

    pub fn node_count(&self) -> u32 {
        self.n
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v as usize].len()
    }

    /// Hop distances from `root` (BFS); unreachable nodes map to `None`.
    pub fn hop_distances(&self, root: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n as usize];
        dist[root as usize] = Some(0);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize].unwrap();
            for &w in self.neighbors(v) {
                if dist[w as usize].is_none() {
                    dist[w as usize] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Largest hop distance from `root` within its component.
    pub fn eccentricity(&self, root: NodeId) -> u32 {
        self.hop_distances(root)
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || connected_components(self).len() == 1
    }
}

/// Outcome of a biconnectivity analysis: exactly the bridges and articulation
/// points of the graph, plus its connected components.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BiconnectivityReport {
    pub bridges: BTreeSet<Edge>,
    pub articulation_points: BTreeSet<NodeId>,
    pub components: Vec<Vec<NodeId>>,
}

/// Partition of the node set into maximal connected subgraphs. Components and
/// their members come out in ascending id order.
pub fn connected_components(g: &Graph) -> Vec<Vec<NodeId>> {
    let mut seen = vec![false; g.node_count() as usize];
    let mut parts = Vec::new();
    for start in g.nodes() {
        if seen[start as usize] {
            continue;
        }
        let mut part = Vec::new();
        let mut stack = vec![start];
        seen[start as usize] = true;
        while let Some(v) = stack.pop() {
            part.push(v);
            for &w in g.neighbors(v) {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    stack.push(w);
                }
            }
        }
        part.sort_unstable();
        parts.push(part);
    }
    parts
}

/// Single-pass DFS biconnectivity analysis (bridges via `low > disc` on tree
/// edges, articulation points via the child low-link condition, root handled
/// by its child count). Iterative so arbitrarily deep graphs from the CLI
/// cannot overflow the stack.
pub fn tarjan_report(g: &Graph) -> BiconnectivityReport {
    let n = g.node_count() as usize;
    let mut disc = vec![u32::MAX; n];
    let mut low = vec![u32::MAX; n];
    let mut parent: Vec<Option<NodeId>> = vec![None; n];
    let mut counter = 0u32;
    let mut bridges = BTreeSet::new();
    let mut articulation = BTreeSet::new();

    for root in g.nodes() {
        if disc[root as usize] != u32::MAX {
            continue;
        }
        let mut root_children = 0usize;
        // Stack frames: (node, index of next neighbor to visit).
        let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
        disc[root as usize] = counter;
        low[root as usize] = counter;
        counter += 1;

        while let Some(&mut (v, ref mut idx)) = stack.last_mut() {
            let vi = v as usize;
            if *idx < g.neighbors(v).len() {
                let w = g.neighbors(v)[*idx];
                *idx += 1;
                let wi = w as usize;
                if disc[wi] == u32::MAX {
                    parent[wi] = Some(v);
                    if v == root {
                        root_children += 1;
                    }
                    disc[wi] = counter;
                    low[wi] = counter;
                    counter += 1;
                    stack.push((w, 0));
                } else if parent[vi] != Some(w) {
                    low[vi] = low[vi].min(disc[wi]);
                }
            } else {
                stack.pop();
                if let Some(p) = parent[vi] {
                    let pi = p as usize;
                    low[pi] = low[pi].min(low[vi]);
                    if low[vi] > disc[pi] {
                        bridges.insert(Edge::new(p, v));
                    }
                    if p != root && low[vi] >= disc[pi] {
                        articulation.insert(p);
                    }
                }
            }
        }
        if root_children >= 2 {
            articulation.insert(root);
        }
    }

    BiconnectivityReport {
        bridges,
        articulation_points: articulation,
        components: connected_components(g),
    }
}

/// Element-removal oracle: classifies every edge and node directly against
/// the definitions (removal increases the component count). Quadratic, meant
/// for small graphs and as the independent check on `tarjan_report`.
pub fn brute_force_report(g: &Graph) -> BiconnectivityReport {
    let base = connected_components(g).len();
    let mut bridges = BTreeSet::new();
    for &e in g.edges.iter() {
        let rest = Graph::new(g.n, g.edges.iter().copied().filter(|&x| x != e))
            .expect("subgraph of a valid graph");
        if connected_components(&rest).len() > base {
            bridges.insert(e);
        }
    }

    let mut articulation = BTreeSet::new();
    for v in g.nodes() {
        // Components among the remaining nodes only.
        let keep: Vec<NodeId> = g.nodes().filter(|&u| u != v).collect();
        let remap: std::collections::BTreeMap<NodeId, NodeId> = keep
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, i as NodeId))
            .collect();
        let rest = Graph::new(
            keep.len() as u32,
            g.edges
                .iter()
                .filter(|e| !e.touches(v))
                .map(|e| Edge::new(remap[&e.0], remap[&e.1])),
        )
        .expect("subgraph of a valid graph");
        let without = connected_components(&rest).len();
        if without > base {
            articulation.insert(v);
        }
    }

    BiconnectivityReport {
        bridges,
        articulation_points: articulation,
        components: connected_components(g),
    }
}

/// Parse the graph text format: a `nodes N` header, then one `u v [etx]`
/// line per edge. `#`-prefixed lines and blank lines are skipped. Returns
/// the graph and any per-edge ETX annotations.
pub fn parse_graph_text(text: &str) -> Result<(Graph, Vec<(Edge, Option<f64>)>), GraphError> {
    let mut n: Option<u32> = None;
    let mut edges: Vec<(Edge, Option<f64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        if n.is_none() {
            let kw = parts.next().unwrap_or_default();
            let val = parts.next();
            if kw != "nodes" || val.is_none() || parts.next().is_some() {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: "expected header `nodes N`".into(),
                });
            }
            n = Some(val.unwrap().parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid node count `{}`", val.unwrap()),
            })?);
            continue;
        }
        let count = n.unwrap();
        let mut field = |name: &str| -> Result<String, GraphError> {
            parts.next().map(str::to_owned).ok_or(GraphError::Parse {
                line: line_no,
                msg: format!("missing {name}"),
            })
        };
        let u: u32 = field("source node")?.parse().map_err(|_| GraphError::Parse {
            line: line_no,
            msg: "invalid source node id".into(),
        })?;
        let v: u32 = field("target node")?.parse().map_err(|_| GraphError::Parse {
            line: line_no,
            msg: "invalid target node id".into(),
        })?;
        if u == v {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("self-loop on node {u}"),
            });
        }
        if u >= count || v >= count {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("edge {u} {v} outside node range 0..{count}"),
            });
        }
        let etx = match parts.next() {
            None => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid ETX annotation `{s}`"),
            })?),
        };
        if parts.next().is_some() {
            return Err(GraphError::Parse {
                line: line_no,
                msg: "trailing fields after `u v [etx]`".into(),
            });
        }
        edges.push((Edge::new(u, v), etx));
    }
    let n = n.ok_or(GraphError::Parse {
        line: 0,
        msg: "missing `nodes N` header".into(),
    })?;
    let g = Graph::new(n, edges.iter().map(|(e, _)| *e))?;
    Ok((g, edges))
}

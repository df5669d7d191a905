//! Reception-probability model (log-normal shadowing expressed as a
//! Gaussian-in-dB margin), broadcast counters, and ETX computation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::graph::{Edge, Graph, GraphError, NodeId};

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("probability {0} outside [0,1]")]
    InvalidProbability(f64),
    #[error("ETX threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("link {0}->{1} undefined: node {2} never transmitted")]
    UndefinedLink(NodeId, NodeId, NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Shadowing-channel parameters. Reception is modeled directly as a
/// probability curve: a fixed dB margin over log-distance path loss, smeared
/// by a Gaussian with standard deviation `std_db`. The raw NS2-style fields
/// are carried for config fidelity only; `margin_db` is what the model uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowingParams {
    pub pathloss_exp: f64,
    pub std_db: f64,
    pub dist0: f64,
    /// Transmit-power-over-threshold margin at `dist0`, in dB.
    pub margin_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_thresh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cs_thresh: Option<f64>,
}

impl ShadowingParams {
    /// Choose `margin_db` so that the reception probability equals
    /// `p_target` at distance `at_distance`.
    pub fn calibrated(
        pathloss_exp: f64,
        std_db: f64,
        dist0: f64,
        p_target: f64,
        at_distance: f64,
    ) -> Self {
        assert!(pathloss_exp > 0.0 && std_db > 0.0 && dist0 > 0.0);
        assert!(p_target > 0.0 && p_target < 1.0 && at_distance > 0.0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let loss = 10.0 * pathloss_exp * (at_distance / dist0).log10();
        let margin_db = loss + std_db * normal.inverse_cdf(p_target);
        ShadowingParams {
            pathloss_exp,
            std_db,
            dist0,
            margin_db,
            p_t: None,
            g_t: None,
            freq: None,
            l: None,
            rx_thresh: None,
            cs_thresh: None,
        }
    }
}

impl Default for ShadowingParams {
    /// Calibrated so the probability-vs-distance curve is ~1 below 100
    /// units and reaches 0.1 at 370 units (std_db = 2, pathloss_exp = 2).
    fn default() -> Self {
        let mut p = ShadowingParams::calibrated(2.0, 2.0, 1.0, 0.1, 370.0);
        p.p_t = Some(24.0);
        p.g_t = Some(1.0);
        p.freq = Some(2.472e9);
        p.l = Some(1.0);
        p.rx_thresh = Some(-95.0);
        p.cs_thresh = Some(-96.0);
        p
    }
}

/// Probability that a single transmission over `distance` is received:
/// Φ((margin_db − 10·pathloss_exp·log10(distance/dist0)) / std_db).
/// Monotone non-increasing in distance.
pub fn reception_probability(distance: f64, p: &ShadowingParams) -> Result<f64, RadioError> {
    if !(distance > 0.0) {
        return Err(RadioError::NonPositiveDistance(distance));
    }
    let loss = 10.0 * p.pathloss_exp * (distance / p.dist0).log10();
    let z = (p.margin_db - loss) / p.std_db;
    let normal = Normal::new(0.0, 1.0).unwrap();
    Ok(normal.cdf(z))
}

/// Per-directed-pair broadcast bookkeeping: how many broadcasts each node
/// sent, and how many of sender `a`'s broadcasts receiver `b` actually got.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficCounters {
    tx: Vec<u64>,
    rx: Vec<u64>, // flattened (sender, receiver) matrix
    n: u32,
}

impl TrafficCounters {
    pub fn new(n: u32) -> Self {
        TrafficCounters {
            tx: vec![0; n as usize],
            rx: vec![0; (n as usize) * (n as usize)],
            n,
        }
    }

    pub fn node_count(&self) -> u32 {
        self.n
    }

    pub fn record_tx(&mut self, sender: NodeId) {
        self.tx[sender as usize] += 1;
    }

    pub fn record_rx(&mut self, sender: NodeId, receiver: NodeId) {
        self.rx[sender as usize * self.n as usize + receiver as usize] += 1;
        debug_assert!(self.rx_count(sender, receiver) <= self.tx_count(sender));
    }

    pub fn tx_count(&self, sender: NodeId) -> u64 {
        self.tx[sender as usize]
    }

    pub fn rx_count(&self, sender: NodeId, receiver: NodeId) -> u64 {
        self.rx[sender as usize * self.n as usize + receiver as usize]
    }

    /// Raw insertion for tests and for reading counters back from disk.
    pub fn set(&mut self, sender: NodeId, receiver: NodeId, tx: u64, rx: u64) {
        self.tx[sender as usize] = tx;
        self.rx[sender as usize * self.n as usize + receiver as usize] = rx;
    }
}

/// ETX of a link with forward delivery probability `d_f` and reverse
/// delivery probability `d_r`: 1/(d_f·d_r). A dead direction yields the
/// infinite sentinel (no link).
pub fn etx_from_probabilities(d_f: f64, d_r: f64) -> Result<f64, RadioError> {
    for p in [d_f, d_r] {
        if !(0.0..=1.0).contains(&p) {
            return Err(RadioError::InvalidProbability(p));
        }
    }
    if d_f == 0.0 || d_r == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (d_f * d_r))
}

/// ETX measured from whole-run broadcast counters:
/// 1 / ((rx[(a,b)]/tx[a]) · (rx[(b,a)]/tx[b])).
pub fn etx_from_counters(c: &TrafficCounters, a: NodeId, b: NodeId) -> Result<f64, RadioError> {
    let tx_a = c.tx_count(a);
    let tx_b = c.tx_count(b);
    if tx_a == 0 {
        return Err(RadioError::UndefinedLink(a, b, a));
    }
    if tx_b == 0 {
        return Err(RadioError::UndefinedLink(a, b, b));
    }
    let d_f = c.rx_count(a, b) as f64 / tx_a as f64;
    let d_r = c.rx_count(b, a) as f64 / tx_b as f64;
    etx_from_probabilities(d_f, d_r)
}

/// The reference topology at threshold `e_s`: all nodes, and an edge for
/// every pair whose measured ETX is at most the threshold. Pairs with an
/// undefined metric (a side that never transmitted) contribute no edge.
pub fn etx_reference_graph(
    counters: &TrafficCounters,
    e_s: f64,
) -> Result<Graph, RadioError> {
    if !(e_s > 0.0) {
        return Err(RadioError::InvalidThreshold(e_s));
    }
    let n = counters.node_count();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            match etx_from_counters(counters, a, b) {
                Ok(etx) if etx <= e_s => edges.push(Edge::new(a, b)),
                Ok(_) => {}
                Err(RadioError::UndefinedLink(..)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Graph::new(n, edges)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::connected_components;
    use approx::assert_relative_eq;

    #[test]
    fn calibrated_margin_matches_hand_inversion() {
        // margin = 10·2·log10(370) + 2·Φ⁻¹(0.1)
        let p = ShadowingParams::default();
        assert_relative_eq!(p.margin_db, 48.8009, epsilon = 1e-3);
        assert_relative_eq!(
            reception_probability(370.0, &p).unwrap(),
            0.1,
            epsilon = 1e-9
        );
        assert!(reception_probability(100.0, &p).unwrap() > 0.99);
    }

    #[test]
    fn curve_shape_at_default_parameters() {
        let p = ShadowingParams::default();
        assert!(reception_probability(90.0, &p).unwrap() > 0.999);
        assert!(reception_probability(420.0, &p).unwrap() < 0.05);
    }

    #[test]
    fn tiny_std_becomes_step_function() {
        let mut p = ShadowingParams::default();
        p.std_db = 1e-9;
        // Step at the distance where the margin equals the path loss.
        let step_at = 10f64.powf(p.margin_db / (10.0 * p.pathloss_exp));
        assert!(reception_probability(step_at * 0.99, &p).unwrap() > 1.0 - 1e-12);
        assert!(reception_probability(step_at * 1.01, &p).unwrap() < 1e-12);
    }

    #[test]
    fn probability_is_monotone_in_distance() {
        let p = ShadowingParams::default();
        let mut last = 1.0;
        for d in (1..=600).map(|i| i as f64) {
            let v = reception_probability(d, &p).unwrap();
            assert!(v <= last + 1e-15, "p({d}) = {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn std_widens_the_transition() {
        // More shadowing spread flattens the curve: below the 0.5 crossing
        // the probability drops, beyond it it rises.
        let narrow = ShadowingParams::calibrated(2.0, 1.0, 1.0, 0.5, 250.0);
        let wide = ShadowingParams::calibrated(2.0, 3.0, 1.0, 0.5, 250.0);
        assert!(
            reception_probability(150.0, &wide).unwrap()
                < reception_probability(150.0, &narrow).unwrap()
        );
        assert!(
            reception_probability(400.0, &wide).unwrap()
                > reception_probability(400.0, &narrow).unwrap()
        );
    }

    #[test]
    fn rejects_nonpositive_distance() {
        let p = ShadowingParams::default();
        assert!(reception_probability(0.0, &p).is_err());
        assert!(reception_probability(-3.0, &p).is_err());
    }

    #[test]
    fn etx_basic_values() {
        assert_relative_eq!(etx_from_probabilities(1.0, 1.0).unwrap(), 1.0);
        let p31 = (1.0f64 / 10.0).sqrt();
        assert_relative_eq!(etx_from_probabilities(p31, p31).unwrap(), 10.0);
        assert_relative_eq!(etx_from_probabilities(0.1, 0.1).unwrap(), 100.0);
        assert!(etx_from_probabilities(0.0, 0.5).unwrap().is_infinite());
        assert!(etx_from_probabilities(1.5, 0.5).is_err());
    }

    #[test]
    fn etx_from_counter_arithmetic() {
        let mut c = TrafficCounters::new(2);
        c.set(0, 1, 10, 10);
        c.set(1, 0, 10, 10);
        assert_relative_eq!(etx_from_counters(&c, 0, 1).unwrap(), 1.0);

        c.set(0, 1, 10, 5);
        c.set(1, 0, 10, 5);
        assert_relative_eq!(etx_from_counters(&c, 0, 1).unwrap(), 4.0);

        c.set(0, 1, 10, 0);
        assert!(etx_from_counters(&c, 0, 1).unwrap().is_infinite());

        let empty = TrafficCounters::new(2);
        assert!(etx_from_counters(&empty, 0, 1).is_err());
    }

    /// Abbildung-6.1 shape: one edge of the measured graph exceeds the
    /// threshold, so the reference graph splits in two.
    #[test]
    fn reference_graph_drops_weak_edge() {
        // 0=A,1=B with ETX 120; two little clusters otherwise.
        let mut c = TrafficCounters::new(6);
        let mut link = |a: NodeId, b: NodeId, p: f64| {
            let rx = (100.0 * p) as u64;
            c.set(a, b, 100, rx);
            c.set(b, a, 100, rx);
        };
        link(0, 2, 1.0);
        link(0, 3, 1.0);
        link(2, 3, 1.0);
        link(1, 4, 1.0);
        link(1, 5, 1.0);
        link(4, 5, 1.0);
        // ETX(A,B) = 1/0.09² ≈ 123 > 100.
        link(0, 1, 0.09);

        let g = etx_reference_graph(&c, 100.0).unwrap();
        assert!(!g.has_edge(Edge::new(0, 1)));
        assert_eq!(connected_components(&g).len(), 2);

        // Permissive threshold keeps every measured pair.
        let g_all = etx_reference_graph(&c, f64::INFINITY).unwrap();
        assert!(g_all.has_edge(Edge::new(0, 1)));
        assert_eq!(connected_components(&g_all).len(), 1);

        // Threshold 1 keeps only perfect links.
        let g1 = etx_reference_graph(&c, 1.0).unwrap();
        assert!(g1.has_edge(Edge::new(2, 3)));
        assert!(!g1.has_edge(Edge::new(0, 1)));
    }

    #[test]
    fn reference_graph_is_monotone_in_threshold() {
        let mut c = TrafficCounters::new(5);
        for a in 0..5u32 {
            for b in 0..5u32 {
                if a != b {
                    let p = 1.0 / (1.0 + (a + b) as f64 * 0.3);
                    c.set(a, b, 50, (50.0 * p) as u64);
                }
            }
        }
        let mut prev: Option<Vec<Edge>> = None;
        for t in [1.0, 2.0, 5.0, 20.0, 1e6] {
            let g = etx_reference_graph(&c, t).unwrap();
            assert_eq!(g.node_count(), 5);
            let edges: Vec<Edge> = g.edges().copied().collect();
            if let Some(p) = prev {
                assert!(p.iter().all(|e| edges.contains(e)), "threshold {t}");
            }
            prev = Some(edges);
        }
    }
}

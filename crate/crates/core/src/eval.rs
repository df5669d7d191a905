//! Post-hoc evaluation: build the ETX reference topology from broadcast
//! counters, classify every snapshot's claims against it, and aggregate
//! precision / recall / F-measure with Student-t confidence intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::artifacts::SnapshotRow;
use crate::graph::{tarjan_report, BiconnectivityReport, Edge, Graph, NodeId};
use crate::protocol::{NodeResults, StatementRecord, StatementSubject};
use crate::radio::{etx_reference_graph, RadioError, TrafficCounters};
use crate::voting::{vote, RuleConfig, Statement, VotingError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confidence intervals need at least two samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("confidence level {0} outside (0,1)")]
    BadLevel(f64),
    #[error("snapshot references node {0} outside the reference graph (0..{1})")]
    UnknownNode(NodeId, u32),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Voting(#[from] VotingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// TP/(TP+FP); degenerate denominators yield (0, flagged).
    pub fn precision(&self) -> (f64, bool) {
        if self.tp + self.fp == 0 {
            (0.0, true)
        } else {
            (self.tp as f64 / (self.tp + self.fp) as f64, false)
        }
    }

    /// TP/(TP+FN); degenerate denominators yield (0, flagged).
    pub fn recall(&self) -> (f64, bool) {
        if self.tp + self.fn_ == 0 {
            (0.0, true)
        } else {
            (self.tp as f64 / (self.tp + self.fn_) as f64, false)
        }
    }

    /// Harmonic mean of this matrix's own precision and recall — never of
    /// cross-run means.
    pub fn f1(&self) -> (f64, bool) {
        let (p, dp) = self.precision();
        let (r, dr) = self.recall();
        if dp || dr || p + r == 0.0 {
            (0.0, true)
        } else {
            (2.0 * p * r / (p + r), false)
        }
    }
}

/// Per-run metric values; `degenerate` marks 0/0 denominators reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl From<&ConfusionMatrix> for MetricSample {
    fn from(cm: &ConfusionMatrix) -> Self {
        let (precision, dp) = cm.precision();
        let (recall, dr) = cm.recall();
        let (f1, df) = cm.f1();
        MetricSample {
            precision,
            recall,
            f1,
            degenerate: dp || dr || df,
        }
    }
}

/// Reference topology plus its ground truth, from whole-run counters.
pub fn build_reference(
    counters: &TrafficCounters,
    etx_threshold: f64,
) -> Result<(Graph, BiconnectivityReport), EvalError> {
    let g = etx_reference_graph(counters, etx_threshold)?;
    let report = tarjan_report(&g);
    Ok((g, report))
}

#[derive(Debug, Clone, Default)]
pub struct ClassifyOptions {
    /// Count a bridge claim only when both endpoints report it within the
    /// same snapshot sequence number.
    pub detected_twice: bool,
    /// Keep-only edge mask; anything else becomes non-evaluable.
    pub mask: Option<BTreeSet<Edge>>,
}

impl ClassifyOptions {
    pub fn standard() -> Self {
        ClassifyOptions {
            detected_twice: true,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Classification {
    pub bridges: ConfusionMatrix,
    pub articulation: ConfusionMatrix,
    /// Bridge claims on edges outside the evaluable universe.
    pub excluded: u64,
}

/// Score every snapshot's published verdicts against the reference report.
/// Bridge decisions are counted over the reference graph's (optionally
/// masked) edge set; articulation decisions over all nodes, never excluded.
pub fn classify_run(
    snapshots: &[SnapshotRow],
    reference: &Graph,
    report: &BiconnectivityReport,
    opts: &ClassifyOptions,
) -> Result<Classification, EvalError> {
    let n = reference.node_count();
    let evaluable: BTreeSet<Edge> = reference
        .edges()
        .copied()
        .filter(|e| opts.mask.as_ref().map_or(true, |m| m.contains(e)))
        .collect();
    let ref_bridges: BTreeSet<Edge> = report
        .bridges
        .iter()
        .copied()
        .filter(|e| evaluable.contains(e))
        .collect();
    let ref_artic = &report.articulation_points;

    let mut by_seq: BTreeMap<u32, Vec<&SnapshotRow>> = BTreeMap::new();
    for row in snapshots {
        if row.node >= n {
            return Err(EvalError::UnknownNode(row.node, n));
        }
        by_seq.entry(row.seq).or_default().push(row);
    }

    let mut out = Classification::default();
    for rows in by_seq.values() {
        let mut claimants: BTreeMap<Edge, BTreeSet<NodeId>> = BTreeMap::new();
        let mut artic_claims: BTreeSet<NodeId> = BTreeSet::new();
        for row in rows {
            for e in &row.results.bridges {
                claimants.entry(*e).or_default().insert(row.node);
            }
            if row.results.is_articulation {
                artic_claims.insert(row.node);
            }
        }

        let claimed: BTreeSet<Edge> = claimants
            .iter()
            .filter(|(e, nodes)| {
                if opts.detected_twice {
                    let (a, b) = e.endpoints();
                    nodes.contains(&a) && nodes.contains(&b)
                } else {
                    !nodes.is_empty()
                }
            })
            .map(|(e, _)| *e)
            .collect();

        for e in &claimed {
            if !evaluable.contains(e) {
                out.excluded += 1;
            } else if ref_bridges.contains(e) {
                out.bridges.tp += 1;
            } else {
                out.bridges.fp += 1;
            }
        }
        for e in &ref_bridges {
            if !claimed.contains(e) {
                out.bridges.fn_ += 1;
            }
        }
        let claimed_evaluable = claimed.iter().filter(|e| evaluable.contains(e)).count() as u64;
        out.bridges.tn +=
            evaluable.len() as u64 - claimed_evaluable - out_fn_delta(&ref_bridges, &claimed);

        for v in 0..n {
            let claimed = artic_claims.contains(&v);
            let actual = ref_artic.contains(&v);
            match (claimed, actual) {
                (true, true) => out.articulation.tp += 1,
                (true, false) => out.articulation.fp += 1,
                (false, true) => out.articulation.fn_ += 1,
                (false, false) => out.articulation.tn += 1,
            }
        }
    }
    Ok(out)
}

/// Reference bridges not claimed this snapshot (the FN contribution), used
/// to keep the TN count consistent: evaluable = TP+FP+TN+FN per snapshot.
fn out_fn_delta(ref_bridges: &BTreeSet<Edge>, claimed: &BTreeSet<Edge>) -> u64 {
    ref_bridges.difference(claimed).count() as u64
}

/// Replay a statement log under a voting rule: reconstruct what every node
/// would have published at each snapshot time. With `bridge_rule = None`
/// the raw last-statement verdicts come back (the no-voting default).
pub fn revote_snapshots(
    statements: &[StatementRecord],
    node_count: u32,
    times: &[(u32, f64)],
    bridge_rule: Option<&RuleConfig>,
    artic_rule: Option<&RuleConfig>,
) -> Result<Vec<SnapshotRow>, EvalError> {
    // Per (node, subject) statement streams, in time order (the log is
    // already completion-ordered).
    let mut edge_streams: BTreeMap<(NodeId, NodeId), Vec<Statement>> = BTreeMap::new();
    let mut artic_streams: BTreeMap<NodeId, Vec<Statement>> = BTreeMap::new();
    for r in statements {
        let s = Statement {
            positive: r.positive,
            competence: r.competence,
            search_key: r.search_key,
            time: r.time,
        };
        match r.subject {
            StatementSubject::Edge(nb) => {
                edge_streams.entry((r.node, nb)).or_default().push(s)
            }
            StatementSubject::SelfArticulation => {
                artic_streams.entry(r.node).or_default().push(s)
            }
        }
    }

    let verdict_at = |stream: &[Statement],
                      t: f64,
                      rule: Option<&RuleConfig>|
     -> Result<bool, EvalError> {
        let upto = stream.partition_point(|s| s.time <= t);
        let hist = &stream[..upto];
        if hist.is_empty() {
            return Ok(false);
        }
        Ok(match rule {
            None => hist.last().map(|s| s.positive).unwrap_or(false),
            Some(rc) => vote(hist, rc)?,
        })
    };

    let mut rows = Vec::with_capacity(times.len() * node_count as usize);
    for &(seq, t) in times {
        for node in 0..node_count {
            let mut bridges = Vec::new();
            for ((n, nb), stream) in edge_streams.range((node, 0)..=(node, u32::MAX)) {
                debug_assert_eq!(*n, node);
                if verdict_at(stream, t, bridge_rule)? {
                    bridges.push(Edge::new(node, *nb));
                }
            }
            let is_articulation = artic_streams
                .get(&node)
                .map(|s| verdict_at(s, t, artic_rule))
                .transpose()?
                .unwrap_or(false);
            rows.push(SnapshotRow {
                seq,
                node,
                results: NodeResults {
                    bridges,
                    is_articulation,
                },
            });
        }
    }
    Ok(rows)
}

/// Sample mean and two-sided Student-t confidence halfwidth.
pub fn mean_ci(samples: &[f64], level: f64) -> Result<(f64, f64), EvalError> {
    let n = samples.len();
    if n < 2 {
        return Err(EvalError::NotEnoughSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::BadLevel(level));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.5 + level / 2.0);
    Ok((mean, t * sd / (n as f64).sqrt()))
}

/// The reporting notation for an aggregated metric:
/// `mean ± halfwidth (P% C.I., n=N)`.
pub struct CiSummary {
    pub mean: f64,
    pub halfwidth: f64,
    pub level: f64,
    pub n: usize,
}

impl CiSummary {
    pub fn compute(samples: &[f64], level: f64) -> Result<Self, EvalError> {
        let (mean, halfwidth) = mean_ci(samples, level)?;
        Ok(CiSummary {
            mean,
            halfwidth,
            level,
            n: samples.len(),
        })
    }

    /// Intervals [m1±h1] and [m2±h2] do not overlap.
    pub fn separated_from(&self, other: &CiSummary) -> bool {
        self.mean - self.halfwidth > other.mean + other.halfwidth
            || other.mean - other.halfwidth > self.mean + self.halfwidth
    }
}

impl fmt::Display for CiSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.4} ± {:.4} ({:.0}% C.I., n={})",
            self.mean,
            self.halfwidth,
            self.level * 100.0,
            self.n
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::NodeResults;
    use approx::assert_relative_eq;

    #[test]
    fn metric_arithmetic() {
        let cm = ConfusionMatrix {
            tp: 8,
            fp: 2,
            tn: 0,
            fn_: 2,
        };
        assert_relative_eq!(cm.precision().0, 0.8);
        assert_relative_eq!(cm.recall().0, 0.8);
        assert_relative_eq!(cm.f1().0, 0.8); // P=R fixed point

        let empty = ConfusionMatrix::default();
        let (p, flagged) = empty.precision();
        assert_eq!(p, 0.0);
        assert!(flagged);
    }

    #[test]
    fn f1_is_per_run_not_of_means() {
        // Two runs with asymmetric P/R: averaging F1 differs from F1 of the
        // averaged precision and recall.
        let runs = [
            ConfusionMatrix {
                tp: 9,
                fp: 1,
                tn: 0,
                fn_: 9,
            },
            ConfusionMatrix {
                tp: 9,
                fp: 9,
                tn: 0,
                fn_: 1,
            },
        ];
        let f1s: Vec<f64> = runs.iter().map(|cm| cm.f1().0).collect();
        let mean_f1 = (f1s[0] + f1s[1]) / 2.0;
        let mean_p = (runs[0].precision().0 + runs[1].precision().0) / 2.0;
        let mean_r = (runs[0].recall().0 + runs[1].recall().0) / 2.0;
        let f1_of_means = 2.0 * mean_p * mean_r / (mean_p + mean_r);
        assert!((mean_f1 - f1_of_means).abs() > 1e-3);
    }

    fn graph(n: u32, edges: &[(u32, u32)]) -> Graph {
        Graph::new(n, edges.iter().map(|&(a, b)| Edge::new(a, b))).unwrap()
    }

    fn row(seq: u32, node: NodeId, bridges: &[(u32, u32)], artic: bool) -> SnapshotRow {
        SnapshotRow {
            seq,
            node,
            results: NodeResults {
                bridges: bridges.iter().map(|&(a, b)| Edge::new(a, b)).collect(),
                is_articulation: artic,
            },
        }
    }

    /// Five-edge fixture: path 0-1-2 plus triangle 2-3-4.
    fn fixture() -> (Graph, BiconnectivityReport) {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (2, 4)]);
        let report = tarjan_report(&g);
        (g, report)
    }

    #[test]
    fn perfect_agreement_scores_perfectly() {
        let (g, report) = fixture();
        // Bridges 0-1, 1-2; articulation 1, 2.
        let snapshots = vec![
            row(1, 0, &[(0, 1)], false),
            row(1, 1, &[(0, 1), (1, 2)], true),
            row(1, 2, &[(1, 2)], true),
            row(1, 3, &[], false),
            row(1, 4, &[], false),
        ];
        let c = classify_run(&snapshots, &g, &report, &ClassifyOptions::standard()).unwrap();
        assert_eq!(c.bridges.tp, 2);
        assert_eq!(c.bridges.fp, 0);
        assert_eq!(c.bridges.fn_, 0);
        assert_eq!(c.bridges.tn, 3);
        assert_eq!(c.bridges.total(), g.edge_count() as u64);
        assert_relative_eq!(MetricSample::from(&c.bridges).f1, 1.0);
        assert_eq!(c.articulation.tp, 2);
        assert_eq!(c.articulation.tn, 3);
        assert_eq!(c.excluded, 0);
    }

    #[test]
    fn one_sided_claim_is_dropped_by_detected_twice() {
        let (g, report) = fixture();
        let snapshots = vec![
            row(1, 0, &[(0, 1)], false),
            row(1, 1, &[(1, 2)], true), // 0-1 claimed only by node 0
            row(1, 2, &[(1, 2)], true),
            row(1, 3, &[], false),
            row(1, 4, &[], false),
        ];
        let opts = ClassifyOptions::standard();
        let c = classify_run(&snapshots, &g, &report, &opts).unwrap();
        assert_eq!(c.bridges.tp, 1); // only 1-2 survives
        assert_eq!(c.bridges.fn_, 1); // 0-1 counted missing

        let union = ClassifyOptions {
            detected_twice: false,
            ..ClassifyOptions::standard()
        };
        let c = classify_run(&snapshots, &g, &report, &union).unwrap();
        assert_eq!(c.bridges.tp, 2);
    }

    #[test]
    fn claims_outside_reference_are_excluded() {
        let (g, report) = fixture();
        // Edge 0-4 does not exist in the reference graph.
        let snapshots = vec![
            row(1, 0, &[(0, 4)], false),
            row(1, 4, &[(0, 4)], false),
            row(1, 1, &[], false),
            row(1, 2, &[], false),
            row(1, 3, &[], false),
        ];
        let c = classify_run(&snapshots, &g, &report, &ClassifyOptions::standard()).unwrap();
        assert_eq!(c.excluded, 1);
        assert_eq!(c.bridges.tp + c.bridges.fp, 0);
        assert_eq!(c.bridges.fn_, 2); // both real bridges missed
    }

    #[test]
    fn mask_restricts_the_universe() {
        let (g, report) = fixture();
        let snapshots = vec![
            row(1, 0, &[(0, 1)], false),
            row(1, 1, &[(0, 1)], false),
            row(1, 2, &[(1, 2)], false),
            row(1, 3, &[], false),
            row(1, 4, &[], false),
        ];
        let opts = ClassifyOptions {
            detected_twice: true,
            mask: Some(BTreeSet::from([Edge::new(0, 1)])),
        };
        let c = classify_run(&snapshots, &g, &report, &opts).unwrap();
        assert_eq!(c.bridges.total(), 1);
        assert_eq!(c.bridges.tp, 1);
        // The masked 1-2 claim was one-sided anyway; nothing excluded.
        assert_eq!(c.excluded, 0);
    }

    #[test]
    fn unknown_node_is_a_data_error() {
        let (g, report) = fixture();
        let snapshots = vec![row(1, 9, &[], false)];
        assert!(matches!(
            classify_run(&snapshots, &g, &report, &ClassifyOptions::standard()),
            Err(EvalError::UnknownNode(9, 5))
        ));
    }

    #[test]
    fn revote_replays_windows() {
        use crate::protocol::{StatementRecord, StatementSubject};
        use crate::voting::{RuleConfig, VoteRule};
        // Node 0, edge to 1: bridge, bridge, non-bridge over three searches.
        let mk = |time: f64, positive: bool| StatementRecord {
            time,
            node: 0,
            subject: StatementSubject::Edge(1),
            positive,
            competence: 1.0,
            search_key: time as u64,
        };
        let statements = vec![mk(1.0, true), mk(2.0, true), mk(3.0, false)];
        let times = [(1u32, 2.5), (2u32, 3.5)];

        // Raw: last statement wins.
        let raw = revote_snapshots(&statements, 2, &times, None, None).unwrap();
        let row = |seq: u32, node: NodeId| {
            raw.iter().find(|r| r.seq == seq && r.node == node).unwrap().clone()
        };
        assert!(!row(1, 0).results.bridges.is_empty());
        assert!(row(2, 0).results.bridges.is_empty());

        // Simple majority keeps the claim alive through the lone negative.
        let rc = RuleConfig::new(VoteRule::SimpleMajority);
        let voted = revote_snapshots(&statements, 2, &times, Some(&rc), Some(&rc)).unwrap();
        let voted_row = voted
            .iter()
            .find(|r| r.seq == 2 && r.node == 0)
            .unwrap();
        assert!(!voted_row.results.bridges.is_empty());
    }

    #[test]
    fn mean_ci_matches_hand_t_table() {
        // {0,1} at 95%: t(0.975, df=1) = 12.7062, hw = 12.7062·0.7071/√2.
        let (mean, hw) = mean_ci(&[0.0, 1.0], 0.95).unwrap();
        assert_relative_eq!(mean, 0.5);
        assert_relative_eq!(hw, 6.3531, epsilon = 1e-3);

        let (_, hw0) = mean_ci(&[0.4, 0.4, 0.4], 0.95).unwrap();
        assert_relative_eq!(hw0, 0.0);

        assert!(mean_ci(&[1.0], 0.95).is_err());
    }

    #[test]
    fn mean_ci_scales_linearly() {
        let xs = [0.2, 0.5, 0.9, 0.4];
        let scaled: Vec<f64> = xs.iter().map(|x| x * 3.0).collect();
        let (m1, h1) = mean_ci(&xs, 0.9).unwrap();
        let (m2, h2) = mean_ci(&scaled, 0.9).unwrap();
        assert_relative_eq!(m2, 3.0 * m1, epsilon = 1e-12);
        assert_relative_eq!(h2, 3.0 * h1, epsilon = 1e-12);
    }

    #[test]
    fn summary_notation() {
        let s = CiSummary::compute(&[0.4, 0.5, 0.6], 0.95).unwrap();
        let text = format!("{s}");
        assert!(text.contains("±"));
        assert!(text.contains("95% C.I., n=3"));
    }
}

//! Run artifacts and their on-disk formats. Every file starts with a
//! header comment naming the tool version, the seed, and the config digest,
//! so any output can be traced back to the exact invocation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::graph::{Edge, NodeId};
use crate::protocol::{NodeResults, StatementRecord, StatementSubject};
use crate::radio::TrafficCounters;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("missing artifact file {0}")]
    Missing(String),
}

/// Provenance line for output files.
#[derive(Debug, Clone)]
pub struct FileHeader {
    pub seed: u64,
    pub config_digest: String,
}

impl FileHeader {
    pub fn line(&self) -> String {
        format!(
            "# dibadawn-{} seed={} config={}",
            TOOL_VERSION, self.seed, self.config_digest
        )
    }
}

/// One node's published verdicts at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub seq: u32,
    pub node: NodeId,
    pub results: NodeResults,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub broadcasts: u64,
    pub unicast_sends: u64,
    pub unicast_attempts: u64,
    pub unicast_failures: u64,
    pub searches_started: u64,
    pub searches_completed: u64,
    pub end_time: f64,
}

/// Everything one simulation run leaves behind.
#[derive(Debug)]
pub struct RunArtifacts {
    pub seed: u64,
    pub node_count: u32,
    /// Published verdicts per snapshot (voted when a rule is configured).
    pub snapshots: Vec<SnapshotRow>,
    /// Raw last-search verdicts, captured alongside when requested.
    pub raw_snapshots: Option<Vec<SnapshotRow>>,
    pub counters: TrafficCounters,
    pub statements: Vec<StatementRecord>,
    pub stats: RunStats,
    pub event_log: Option<Vec<String>>,
}

fn edges_field(bridges: &[Edge]) -> String {
    let mut sorted: Vec<&Edge> = bridges.iter().collect();
    sorted.sort();
    let mut s = String::new();
    for (i, e) in sorted.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{e}");
    }
    s
}

fn parse_edges_field(s: &str) -> Result<Vec<Edge>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let (a, b) = pair
                .split_once('-')
                .ok_or_else(|| format!("bad edge `{pair}`"))?;
            let a: u32 = a.parse().map_err(|_| format!("bad edge `{pair}`"))?;
            let b: u32 = b.parse().map_err(|_| format!("bad edge `{pair}`"))?;
            Ok(Edge::new(a, b))
        })
        .collect()
}

pub fn snapshots_to_csv(rows: &[SnapshotRow], header: &FileHeader) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.line());
    let _ = writeln!(out, "seq,node,is_articulation,bridges");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.seq,
            r.node,
            r.results.is_articulation as u8,
            edges_field(&r.results.bridges)
        );
    }
    out
}

pub fn snapshots_from_csv(text: &str, file: &str) -> Result<Vec<SnapshotRow>, ArtifactError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("seq,") || line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| ArtifactError::Parse {
            file: file.into(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.splitn(4, ',').collect();
        if fields.len() != 4 {
            return Err(parse("expected seq,node,is_articulation,bridges".into()));
        }
        let seq = fields[0].parse().map_err(|_| parse("bad seq".into()))?;
        let node = fields[1].parse().map_err(|_| parse("bad node".into()))?;
        let is_articulation = match fields[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse(format!("bad articulation flag `{other}`"))),
        };
        let bridges = parse_edges_field(fields[3]).map_err(parse)?;
        rows.push(SnapshotRow {
            seq,
            node,
            results: NodeResults {
                bridges,
                is_articulation,
            },
        });
    }
    Ok(rows)
}

pub fn counters_to_csv(c: &TrafficCounters, header: &FileHeader) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.line());
    let _ = writeln!(out, "sender,receiver,tx,rx");
    let n = c.node_count();
    for a in 0..n {
        if c.tx_count(a) == 0 {
            continue;
        }
        for b in 0..n {
            if a != b {
                let _ = writeln!(out, "{},{},{},{}", a, b, c.tx_count(a), c.rx_count(a, b));
            }
        }
    }
    out
}

pub fn counters_from_csv(
    text: &str,
    node_count: u32,
    file: &str,
) -> Result<TrafficCounters, ArtifactError> {
    let mut c = TrafficCounters::new(node_count);
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("sender,") || line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| ArtifactError::Parse {
            file: file.into(),
            line: i + 1,
            msg: msg.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse("expected sender,receiver,tx,rx"));
        }
        let a: u32 = f[0].parse().map_err(|_| parse("bad sender"))?;
        let b: u32 = f[1].parse().map_err(|_| parse("bad receiver"))?;
        let tx: u64 = f[2].parse().map_err(|_| parse("bad tx"))?;
        let rx: u64 = f[3].parse().map_err(|_| parse("bad rx"))?;
        if a >= node_count || b >= node_count {
            return Err(parse("node id out of range"));
        }
        c.set(a, b, tx, rx);
    }
    Ok(c)
}

pub fn statements_to_csv(records: &[StatementRecord], header: &FileHeader) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.line());
    let _ = writeln!(out, "time,node,subject,positive,competence,search_key");
    for r in records {
        let subject = match r.subject {
            StatementSubject::Edge(nb) => format!("{}", Edge::new(r.node, nb)),
            StatementSubject::SelfArticulation => "self".into(),
        };
        let _ = writeln!(
            out,
            "{:.6},{},{},{},{:.7},{}",
            r.time, r.node, subject, r.positive as u8, r.competence, r.search_key
        );
    }
    out
}

pub fn statements_from_csv(text: &str, file: &str) -> Result<Vec<StatementRecord>, ArtifactError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("time,") || line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| ArtifactError::Parse {
            file: file.into(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse("expected 6 fields".into()));
        }
        let time: f64 = f[0].parse().map_err(|_| parse("bad time".into()))?;
        let node: u32 = f[1].parse().map_err(|_| parse("bad node".into()))?;
        let subject = if f[2] == "self" {
            StatementSubject::SelfArticulation
        } else {
            let edges = parse_edges_field(f[2]).map_err(parse)?;
            let e = edges.first().ok_or_else(|| parse("bad subject".into()))?;
            StatementSubject::Edge(e.other(node))
        };
        let positive = f[3] == "1";
        let competence: f64 = f[4].parse().map_err(|_| parse("bad competence".into()))?;
        let search_key: u64 = f[5].parse().map_err(|_| parse("bad search key".into()))?;
        out.push(StatementRecord {
            time,
            node,
            subject,
            positive,
            competence,
            search_key,
        });
    }
    Ok(out)
}

pub fn stats_to_csv(s: &RunStats, header: &FileHeader) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.line());
    let _ = writeln!(out, "key,value");
    let _ = writeln!(out, "broadcasts,{}", s.broadcasts);
    let _ = writeln!(out, "unicast_sends,{}", s.unicast_sends);
    let _ = writeln!(out, "unicast_attempts,{}", s.unicast_attempts);
    let _ = writeln!(out, "unicast_failures,{}", s.unicast_failures);
    let _ = writeln!(out, "searches_started,{}", s.searches_started);
    let _ = writeln!(out, "searches_completed,{}", s.searches_completed);
    let _ = writeln!(out, "end_time,{:.6}", s.end_time);
    out
}

/// Write the whole artifact set under `dir`. `meta_toml` is the resolved
/// scenario config plus run provenance, stored verbatim as `meta.toml`.
pub fn write_run(
    dir: &Path,
    run: &RunArtifacts,
    header: &FileHeader,
    meta_toml: &str,
) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("meta.toml"), meta_toml)?;
    fs::write(
        dir.join("snapshots.csv"),
        snapshots_to_csv(&run.snapshots, header),
    )?;
    if let Some(raw) = &run.raw_snapshots {
        fs::write(dir.join("snapshots_raw.csv"), snapshots_to_csv(raw, header))?;
    }
    fs::write(
        dir.join("counters.csv"),
        counters_to_csv(&run.counters, header),
    )?;
    fs::write(
        dir.join("statements.csv"),
        statements_to_csv(&run.statements, header),
    )?;
    fs::write(dir.join("stats.csv"), stats_to_csv(&run.stats, header))?;
    if let Some(log) = &run.event_log {
        let mut text = String::with_capacity(log.len() * 32);
        let _ = writeln!(text, "{}", header.line());
        for l in log {
            let _ = writeln!(text, "{l}");
        }
        fs::write(dir.join("events.log"), text)?;
    }
    Ok(())
}

fn read_to_string(dir: &Path, name: &str) -> Result<String, ArtifactError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(ArtifactError::Missing(path.display().to_string()));
    }
    Ok(fs::read_to_string(path)?)
}

/// Read back the pieces the evaluator needs.
pub struct StoredRun {
    pub meta_toml: String,
    pub snapshots: Vec<SnapshotRow>,
    pub counters: TrafficCounters,
    pub statements: Vec<StatementRecord>,
}

pub fn read_run(dir: &Path, node_count: u32) -> Result<StoredRun, ArtifactError> {
    let meta_toml = read_to_string(dir, "meta.toml")?;
    let snapshots = snapshots_from_csv(&read_to_string(dir, "snapshots.csv")?, "snapshots.csv")?;
    let counters = counters_from_csv(
        &read_to_string(dir, "counters.csv")?,
        node_count,
        "counters.csv",
    )?;
    let statements =
        statements_from_csv(&read_to_string(dir, "statements.csv")?, "statements.csv")?;
    Ok(StoredRun {
        meta_toml,
        snapshots,
        counters,
        statements,
    })
}

/// Distinct snapshot sequence numbers, ascending.
pub fn snapshot_seqs(rows: &[SnapshotRow]) -> Vec<u32> {
    let set: BTreeSet<u32> = rows.iter().map(|r| r.seq).collect();
    set.into_iter().collect()
}

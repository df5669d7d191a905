//! Seeded deterministic discrete-event engine: broadcast and unicast
//! delivery with per-receiver Bernoulli loss, retries, timers, and event
//! ordering by (time, insertion sequence).

use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::graph::NodeId;
use crate::radio::{reception_probability, RadioError, ShadowingParams, TrafficCounters};

pub type SimTime = f64;

/// Below this delivery probability a receiver is not even considered for a
/// broadcast draw; the unbounded Gaussian tail is physically meaningless.
pub const PRUNE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("node {0} has a non-finite position")]
    BadPlacement(NodeId),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

#[derive(Debug, Clone)]
pub enum ChannelMode {
    /// Perfect delivery within `range`, nothing beyond it.
    Lossless { range: f64 },
    /// Distance-dependent Bernoulli loss; `cutoff` is a hard maximum radio
    /// range applied on top of the probability curve.
    Shadowing {
        params: ShadowingParams,
        cutoff: Option<f64>,
    },
    /// Explicit per-directed-pair delivery probabilities; absent pairs never
    /// deliver. Used to script losses in tests.
    LossTable {
        probs: BTreeMap<(NodeId, NodeId), f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    /// Upper bound on the medium time of one transmission, seconds.
    pub max_tx_time: f64,
    /// Total tries for a unicast (first attempt plus retries).
    pub unicast_attempts: u32,
    /// With acks modeled, retrying stops at the first delivered attempt.
    pub ack_modeled: bool,
}

impl ChannelConfig {
    pub fn lossless(range: f64) -> Self {
        ChannelConfig {
            mode: ChannelMode::Lossless { range },
            max_tx_time: 0.002,
            unicast_attempts: 7,
            ack_modeled: true,
        }
    }

    pub fn shadowing(params: ShadowingParams, cutoff: Option<f64>) -> Self {
        ChannelConfig {
            mode: ChannelMode::Shadowing { params, cutoff },
            max_tx_time: 0.002,
            unicast_attempts: 7,
            ack_modeled: true,
        }
    }

    pub fn loss_table(probs: BTreeMap<(NodeId, NodeId), f64>) -> Self {
        ChannelConfig {
            mode: ChannelMode::LossTable { probs },
            max_tx_time: 0.002,
            unicast_attempts: 7,
            ack_modeled: true,
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self.mode, ChannelMode::Lossless { .. })
    }
}

/// Per-node 2-D positions in distance units.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub positions: Vec<(f64, f64)>,
}

impl Placement {
    pub fn node_count(&self) -> u32 {
        self.positions.len() as u32
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (ax, ay) = self.positions[a as usize];
        let (bx, by) = self.positions[b as usize];
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}

/// Callbacks a protocol registers with the engine. Handlers run on the
/// single event-loop thread and may send messages or arm timers through the
/// engine they are handed.
pub trait Protocol {
    type Msg: Clone + Debug;
    type Timer: Clone + Ord + Debug;

    fn on_deliver(
        &mut self,
        engine: &mut Engine<Self::Msg, Self::Timer>,
        to: NodeId,
        from: NodeId,
        msg: Self::Msg,
    );

    fn on_timer(&mut self, engine: &mut Engine<Self::Msg, Self::Timer>, node: NodeId, tag: Self::Timer);
}

enum EventKind<M, T> {
    Deliver {
        from: NodeId,
        msg: M,
    },
    TimerFire {
        tag: T,
        id: u64,
    },
    UnicastAttempt {
        from: NodeId,
        to: NodeId,
        msg: M,
        attempts_left: u32,
        delivered: bool,
    },
}

struct QueuedEvent<M, T> {
    time: SimTime,
    seq: u64,
    node: NodeId,
    kind: EventKind<M, T>,
}

impl<M, T> PartialEq for QueuedEvent<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl<M, T> Eq for QueuedEvent<M, T> {}
impl<M, T> PartialOrd for QueuedEvent<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<M, T> Ord for QueuedEvent<M, T> {
    // Reversed so the BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub broadcasts: u64,
    pub unicast_sends: u64,
    pub unicast_attempts: u64,
    pub unicast_failures: u64,
    pub deliveries: u64,
    pub timer_fires: u64,
}

/// Event a run produces for the protocol, after engine-internal retry
/// bookkeeping has been resolved.
pub enum SimEvent<M, T> {
    Deliver { to: NodeId, from: NodeId, msg: M },
    TimerFire { node: NodeId, tag: T },
}

pub struct Engine<M, T: Ord> {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<QueuedEvent<M, T>>,
    placement: Placement,
    channel: ChannelConfig,
    /// Per sender: receivers with non-negligible delivery probability.
    candidates: Vec<Vec<(NodeId, f64)>>,
    rng: ChaCha8Rng,
    pub counters: TrafficCounters,
    pub stats: EngineStats,
    timers: BTreeMap<(NodeId, T), u64>,
    next_timer: u64,
    log: Option<Vec<String>>,
}

impl<M: Clone + Debug, T: Ord + Clone + Debug> Engine<M, T> {
    pub fn new(
        placement: Placement,
        channel: ChannelConfig,
        seed: u64,
        keep_log: bool,
    ) -> Result<Self, SimError> {
        for (i, &(x, y)) in placement.positions.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(SimError::BadPlacement(i as NodeId));
            }
        }
        let n = placement.node_count();
        let candidates = build_candidates(&placement, &channel)?;
        Ok(Engine {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            placement,
            channel,
            candidates,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: TrafficCounters::new(n),
            stats: EngineStats::default(),
            timers: BTreeMap::new(),
            next_timer: 0,
            log: keep_log.then(Vec::new),
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node_count(&self) -> u32 {
        self.placement.node_count()
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn channel(&self) -> &ChannelConfig {
        &self.channel
    }

    pub fn take_log(&mut self) -> Vec<String> {
        self.log.take().unwrap_or_default()
    }

    pub fn log_lines(&self) -> Option<&[String]> {
        self.log.as_deref()
    }

    /// Uniform draw in [0, hi) from the engine's seeded stream. Protocols
    /// use this for jitter so one seed pins the entire run.
    pub fn rand_uniform(&mut self, hi: f64) -> f64 {
        if hi <= 0.0 {
            return 0.0;
        }
        self.rng.gen_range(0.0..hi)
    }

    /// Bernoulli draw from the engine's seeded stream.
    pub fn rand_bool(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p.clamp(0.0, 1.0))
    }

    /// Delivery probability for one transmission from `a` to `b`.
    pub fn delivery_prob(&self, a: NodeId, b: NodeId) -> f64 {
        match &self.channel.mode {
            ChannelMode::LossTable { probs } => probs.get(&(a, b)).copied().unwrap_or(0.0),
            _ => self
                .candidates[a as usize]
                .iter()
                .find(|(id, _)| *id == b)
                .map(|(_, p)| *p)
                .unwrap_or(0.0),
        }
    }

    /// Receivers a broadcast from `sender` can plausibly reach.
    pub fn reachable(&self, sender: NodeId) -> &[(NodeId, f64)] {
        &self.candidates[sender as usize]
    }

    fn record(&mut self, line: String) {
        if let Some(log) = &mut self.log {
            log.push(line);
        }
    }

    fn push(&mut self, time: SimTime, node: NodeId, kind: EventKind<M, T>) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(QueuedEvent {
            time,
            seq,
            node,
            kind,
        });
    }

    /// Send `msg` to every other node; each receiver independently draws
    /// against its link probability. Deliveries land after `max_tx_time`.
    pub fn broadcast(&mut self, sender: NodeId, msg: M) {
        self.stats.broadcasts += 1;
        self.counters.record_tx(sender);
        let arrive = self.now + self.channel.max_tx_time;
        let targets = self.candidates[sender as usize].clone();
        let mut delivered = 0usize;
        for (to, p) in targets {
            if self.rng.gen_bool(p) {
                self.counters.record_rx(sender, to);
                delivered += 1;
                self.push(
                    arrive,
                    to,
                    EventKind::Deliver {
                        from: sender,
                        msg: msg.clone(),
                    },
                );
            }
        }
        self.record(format!(
            "{:.6} bcast {} reached={}",
            self.now, sender, delivered
        ));
    }

    /// Best-effort unicast: up to `unicast_attempts` draws spaced by
    /// `max_tx_time`; the first success delivers. Exhausted attempts drop
    /// the message silently (only the engine log sees the failure).
    pub fn unicast(&mut self, sender: NodeId, receiver: NodeId, msg: M) {
        self.stats.unicast_sends += 1;
        self.record(format!("{:.6} ucast {} to={}", self.now, sender, receiver));
        let attempts = self.channel.unicast_attempts.max(1);
        self.push(
            self.now,
            sender,
            EventKind::UnicastAttempt {
                from: sender,
                to: receiver,
                msg,
                attempts_left: attempts,
                delivered: false,
            },
        );
    }

    /// Arm (or re-arm) the timer `tag` on `node`. Re-arming an existing tag
    /// supersedes the earlier deadline.
    pub fn set_timer(&mut self, node: NodeId, duration: f64, tag: T) {
        assert!(duration >= 0.0 && duration.is_finite());
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert((node, tag.clone()), id);
        self.push(self.now + duration, node, EventKind::TimerFire { tag, id });
    }

    /// Disarm `tag` on `node` if currently armed; unknown tags are a no-op.
    pub fn cancel_timer(&mut self, node: NodeId, tag: &T) {
        self.timers.remove(&(node, tag.clone()));
    }

    fn process_attempt(
        &mut self,
        from: NodeId,
        to: NodeId,
        msg: M,
        attempts_left: u32,
        delivered: bool,
    ) {
        self.stats.unicast_attempts += 1;
        let p = self.delivery_prob(from, to);
        let success = !delivered && p > 0.0 && self.rng.gen_bool(p);
        let arrive = self.now + self.channel.max_tx_time;
        if success {
            self.push(
                arrive,
                to,
                EventKind::Deliver {
                    from,
                    msg: msg.clone(),
                },
            );
        }
        let done_by_ack = success && self.channel.ack_modeled;
        if attempts_left > 1 && !done_by_ack {
            self.push(
                arrive,
                from,
                EventKind::UnicastAttempt {
                    from,
                    to,
                    msg,
                    attempts_left: attempts_left - 1,
                    delivered: delivered || success,
                },
            );
        } else if !success && !delivered && attempts_left <= 1 {
            self.stats.unicast_failures += 1;
            self.record(format!("{:.6} udrop {} to={}", self.now, from, to));
        }
    }

    /// Pop the next protocol-visible event at or before `t_end`, advancing
    /// the clock. Engine-internal events (retries, stale timers) are
    /// resolved on the way.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<SimEvent<M, T>> {
        loop {
            match self.queue.peek() {
                Some(ev) if ev.time <= t_end => {}
                _ => return None,
            }
            let ev = self.queue.pop().unwrap();
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.kind {
                EventKind::Deliver { from, msg } => {
                    self.stats.deliveries += 1;
                    self.record(format!("{:.6} deliver {} from={}", self.now, ev.node, from));
                    return Some(SimEvent::Deliver {
                        to: ev.node,
                        from,
                        msg,
                    });
                }
                EventKind::TimerFire { tag, id } => {
                    if self.timers.get(&(ev.node, tag.clone())) == Some(&id) {
                        self.timers.remove(&(ev.node, tag.clone()));
                        self.stats.timer_fires += 1;
                        self.record(format!("{:.6} timer {} tag={:?}", self.now, ev.node, tag));
                        return Some(SimEvent::TimerFire {
                            node: ev.node,
                            tag,
                        });
                    }
                    // Cancelled or superseded timer: skip.
                }
                EventKind::UnicastAttempt {
                    from,
                    to,
                    msg,
                    attempts_left,
                    delivered,
                } => {
                    self.process_attempt(from, to, msg, attempts_left, delivered);
                }
            }
        }
    }

    /// Move the clock to `t` without processing anything (events before `t`
    /// must already be drained). The clock never goes backward.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }
}

fn build_candidates(
    placement: &Placement,
    channel: &ChannelConfig,
) -> Result<Vec<Vec<(NodeId, f64)>>, SimError> {
    let n = placement.node_count();
    let mut out = vec![Vec::new(); n as usize];
    match &channel.mode {
        ChannelMode::LossTable { probs } => {
            for (&(a, b), &p) in probs {
                if p > 0.0 {
                    out[a as usize].push((b, p.min(1.0)));
                }
            }
        }
        mode => {
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let d = placement.distance(a, b).max(1e-9);
                    let p = match mode {
                        ChannelMode::Lossless { range } => {
                            if d <= *range {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        ChannelMode::Shadowing { params, cutoff } => {
                            if cutoff.map_or(false, |c| d > c) {
                                0.0
                            } else {
                                reception_probability(d, params)?
                            }
                        }
                        ChannelMode::LossTable { .. } => unreachable!(),
                    };
                    if p > PRUNE_EPS {
                        out[a as usize].push((b, p));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// An engine paired with the protocol instance it drives.
pub struct Sim<P: Protocol> {
    pub engine: Engine<P::Msg, P::Timer>,
    pub protocol: P,
}

impl<P: Protocol> Sim<P> {
    pub fn new(engine: Engine<P::Msg, P::Timer>, protocol: P) -> Self {
        Sim { engine, protocol }
    }

    /// Process all events with time ≤ `t_end` in (time, seq) order, then
    /// leave the clock at `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) {
        while let Some(ev) = self.engine.pop_due(t_end) {
            match ev {
                SimEvent::Deliver { to, from, msg } => {
                    self.protocol.on_deliver(&mut self.engine, to, from, msg)
                }
                SimEvent::TimerFire { node, tag } => {
                    self.protocol.on_timer(&mut self.engine, node, tag)
                }
            }
        }
        self.engine.advance_to(t_end);
    }

    /// Run until no events remain (bounded by `limit` for safety).
    pub fn run_to_completion(&mut self, limit: SimTime) {
        while self.engine.pending_events() > 0 && self.engine.now() < limit {
            self.run_until(limit);
        }
    }
}

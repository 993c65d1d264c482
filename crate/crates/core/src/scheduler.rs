//! Byte-level transmission scheduling.
//!
//! A [`Scheduler`] owns the set of streams with data left to send and, each
//! time the link can take more data, picks one stream and a number of bytes
//! for it. Four strategies are provided: two sequential baselines, plain
//! round robin, and weighted incremental delivery.
//!
//! Weighted incremental delivery is deficit round robin over the shares from
//! [`compute_weight_table`]. A cycle credits every eligible stream with
//! `share * n * quantum` bytes. Streams are then visited in arrival order,
//! each visit granting at most one quantum, and streams whose credit has
//! dropped below one byte are skipped until the next cycle. Fractional credit
//! carries over between cycles.
//!
//! Host integration: call [`Scheduler::on_stream_event`] when a request
//! arrives or is abandoned, and [`Scheduler::next_allocation`] from the
//! connection's event loop whenever there is send capacity. A stream whose
//! last byte is granted leaves the active set on its own.

use std::fmt;

use thiserror::Error;

use crate::priority::{PriorityParams, Urgency};
use crate::weights::{compute_weight_table, Alpha, RequestSet, StreamId, WeightError, WeightTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("no active stream has data to send")]
    NothingToSchedule,
    #[error("stream state error: {0}")]
    State(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// Default grant size, a typical QUIC packet payload.
pub const DEFAULT_QUANTUM: u64 = 1200;

/// Base scheduling unit in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantum(u64);

impl Quantum {
    pub fn new(bytes: u64) -> Result<Self, SchedulerError> {
        if bytes == 0 {
            return Err(SchedulerError::State("quantum must be positive".into()));
        }
        Ok(Quantum(bytes))
    }

    pub fn bytes(self) -> u64 {
        self.0
    }
}

impl Default for Quantum {
    fn default() -> Self {
        Quantum(DEFAULT_QUANTUM)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// One stream at a time, in request order.
    SequentialFifo,
    /// One stream at a time, most urgent first, then request order.
    SequentialByUrgency,
    /// One quantum per stream per turn, in request order.
    RoundRobin,
    WeightedIncremental(Alpha),
}

impl Strategy {
    pub fn is_weighted(&self) -> bool {
        matches!(self, Strategy::WeightedIncremental(_))
    }

    /// Short name used on the command line and in artifacts.
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::SequentialFifo => "sequential-fifo",
            Strategy::SequentialByUrgency => "sequential-urgency",
            Strategy::RoundRobin => "round-robin",
            Strategy::WeightedIncremental(_) => "weighted",
        }
    }

    /// Name plus alpha for weighted strategies, e.g. `weighted-a0.25`.
    pub fn label(&self) -> String {
        match self {
            Strategy::WeightedIncremental(a) => format!("weighted-a{a}"),
            other => other.name().to_owned(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub id: StreamId,
    pub priority: PriorityParams,
    pub bytes_total: u64,
    pub bytes_sent: u64,
    pub deficit: f64,
    pub opened_at: f64,
    pub arrival_index: u64,
}

impl StreamState {
    pub fn new(id: StreamId, priority: PriorityParams, bytes_total: u64, arrival_index: u64) -> Self {
        StreamState {
            id,
            priority,
            bytes_total,
            bytes_sent: 0,
            deficit: 0.0,
            opened_at: 0.0,
            arrival_index,
        }
    }

    pub fn opened_at(mut self, time_ms: f64) -> Self {
        self.opened_at = time_ms;
        self
    }

    pub fn remaining(&self) -> u64 {
        self.bytes_total - self.bytes_sent
    }

    fn key(&self) -> Key {
        (self.arrival_index, self.id)
    }

    fn urgency(&self) -> Urgency {
        self.priority.urgency
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    Open(StreamState),
    /// Removes a stream before its data has all been granted.
    Complete(StreamId),
}

/// One scheduling decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub stream: StreamId,
    pub bytes: u64,
    /// Bytes of this stream granted before this one.
    pub offset: u64,
    /// True when this grant carries the stream's last byte.
    pub finished: bool,
}

type Key = (u64, StreamId);

pub struct Scheduler {
    strategy: Strategy,
    quantum: Quantum,
    /// Sorted by (arrival_index, id).
    streams: Vec<StreamState>,
    weights: Option<WeightTable>,
    static_weights: bool,
    /// Last stream served in turn order.
    cursor: Option<Key>,
    /// Cursor position when the current credit cycle started.
    anchor: Option<Key>,
}

impl Scheduler {
    pub fn new(strategy: Strategy, quantum: Quantum) -> Self {
        Scheduler {
            strategy,
            quantum,
            streams: Vec::new(),
            weights: None,
            static_weights: false,
            cursor: None,
            anchor: None,
        }
    }

    /// Uses a fixed table computed once over every stream that will ever be
    /// opened instead of recomputing shares over the active set.
    pub fn with_static_weights(mut self, table: WeightTable) -> Self {
        self.weights = Some(table);
        self.static_weights = true;
        self
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn quantum(&self) -> Quantum {
        self.quantum
    }

    pub fn active(&self) -> &[StreamState] {
        &self.streams
    }

    pub fn is_idle(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn stream(&self, id: StreamId) -> Option<&StreamState> {
        self.streams.iter().find(|s| s.id == id)
    }

    /// Current shares; `None` for unweighted strategies or an empty active set.
    pub fn weight_table(&self) -> Option<&WeightTable> {
        self.weights.as_ref()
    }

    pub fn on_stream_event(&mut self, event: StreamEvent) -> Result<Option<&WeightTable>, SchedulerError> {
        match event {
            StreamEvent::Open(state) => self.open(state)?,
            StreamEvent::Complete(id) => {
                let idx = self
                    .position(id)
                    .ok_or_else(|| SchedulerError::State(format!("complete for unknown stream {id}")))?;
                self.streams.remove(idx);
                self.refresh_weights()?;
            }
        }
        Ok(self.weights.as_ref())
    }

    fn open(&mut self, mut state: StreamState) -> Result<(), SchedulerError> {
        if self.position(state.id).is_some() {
            return Err(SchedulerError::State(format!("stream {} is already open", state.id)));
        }
        if state.bytes_sent >= state.bytes_total {
            return Err(SchedulerError::State(format!(
                "stream {} has nothing to send ({} of {} bytes sent)",
                state.id, state.bytes_sent, state.bytes_total
            )));
        }
        if self.static_weights && self.weights.as_ref().and_then(|t| t.share(state.id)).is_none() {
            return Err(SchedulerError::State(format!(
                "stream {} is missing from the static weight table",
                state.id
            )));
        }
        state.deficit = 0.0;
        let key = state.key();
        let idx = self.streams.partition_point(|s| s.key() < key);
        self.streams.insert(idx, state);
        self.refresh_weights()?;

        // A stream that lands in the part of the current cycle not yet
        // visited joins that cycle with a full credit.
        if self.strategy.is_weighted()
            && self.streams[idx].priority.incremental
            && in_pending_arc(key, self.cursor, self.anchor)
        {
            let credit = self.credit(&self.streams[idx]);
            self.streams[idx].deficit = credit;
        }
        Ok(())
    }

    fn position(&self, id: StreamId) -> Option<usize> {
        self.streams.iter().position(|s| s.id == id)
    }

    fn refresh_weights(&mut self) -> Result<(), SchedulerError> {
        let Strategy::WeightedIncremental(alpha) = self.strategy else {
            return Ok(());
        };
        if self.static_weights {
            return Ok(());
        }
        self.weights = if self.streams.is_empty() {
            None
        } else {
            let set = RequestSet::new(self.streams.iter().map(|s| (s.id, s.urgency())).collect())?;
            Some(compute_weight_table(&set, alpha)?)
        };
        Ok(())
    }

    /// Credit one cycle adds to a stream: `share * n * quantum`.
    fn credit(&self, stream: &StreamState) -> f64 {
        let Some(table) = &self.weights else {
            return 0.0;
        };
        let share = table.share(stream.id).unwrap_or(0.0);
        let q = self.quantum.bytes() as f64;
        let raw = share * table.len() as f64 * q;
        // Equal shares should credit exactly one quantum; drop the rounding
        // noise left by 1/n * n.
        let whole = raw.round();
        if (raw - whole).abs() <= 1e-9 * q {
            whole
        } else {
            raw
        }
    }

    /// Picks the next stream and grant size and records the grant.
    pub fn next_allocation(&mut self) -> Result<Grant, SchedulerError> {
        if self.streams.is_empty() {
            return Err(SchedulerError::NothingToSchedule);
        }
        let q = self.quantum.bytes();
        let (idx, bytes) = match self.strategy {
            Strategy::SequentialFifo => (0, q),
            Strategy::SequentialByUrgency => (self.most_urgent_sequential(|_| true), q),
            Strategy::RoundRobin => {
                let idx = self.next_in_turn(|_| true).unwrap_or(0);
                self.cursor = Some(self.streams[idx].key());
                (idx, q)
            }
            Strategy::WeightedIncremental(_) => self.next_weighted(),
        };
        Ok(self.commit(idx, bytes))
    }

    fn most_urgent_sequential(&self, filter: impl Fn(&StreamState) -> bool) -> usize {
        let mut best: Option<usize> = None;
        for (i, s) in self.streams.iter().enumerate() {
            if !filter(s) {
                continue;
            }
            // Streams are already in arrival order, so strict < keeps the earliest.
            if best.is_none_or(|b| s.urgency() < self.streams[b].urgency()) {
                best = Some(i);
            }
        }
        best.unwrap_or(0)
    }

    /// First stream after the cursor (wrapping) that satisfies `pred`.
    fn next_in_turn(&self, pred: impl Fn(&StreamState) -> bool) -> Option<usize> {
        let after = match self.cursor {
            Some(c) => self.streams.partition_point(|s| s.key() <= c),
            None => 0,
        };
        (after..self.streams.len())
            .chain(0..after)
            .find(|&i| pred(&self.streams[i]))
    }

    fn next_weighted(&mut self) -> (usize, u64) {
        let q = self.quantum.bytes();
        // Non-incremental streams go one at a time ahead of incremental
        // streams of the same or lower urgency.
        let blocking = self
            .streams
            .iter()
            .filter(|s| !s.priority.incremental)
            .map(|s| s.urgency())
            .min();
        let eligible = |s: &StreamState| s.priority.incremental && blocking.is_none_or(|b| s.urgency() < b);

        if !self.streams.iter().any(eligible) {
            let idx = self.most_urgent_sequential(|s| !s.priority.incremental);
            return (idx, q);
        }

        let idx = match self.next_in_turn(|s| eligible(s) && s.deficit >= 1.0) {
            Some(idx) => idx,
            None => {
                self.replenish(eligible);
                self.next_in_turn(|s| eligible(s) && s.deficit >= 1.0)
                    .expect("replenish leaves some eligible stream with credit")
            }
        };
        self.cursor = Some(self.streams[idx].key());
        let credit = self.streams[idx].deficit.floor() as u64;
        (idx, credit.min(q))
    }

    /// Starts a new cycle. Cycles in which no stream would reach a whole
    /// byte of credit are folded into this one.
    fn replenish(&mut self, eligible: impl Fn(&StreamState) -> bool) {
        self.anchor = self.cursor;
        let credits: Vec<f64> = self.streams.iter().map(|s| self.credit(s)).collect();
        let cycles = self
            .streams
            .iter()
            .zip(&credits)
            .filter(|(s, c)| eligible(s) && **c > 0.0)
            .map(|(s, c)| ((1.0 - s.deficit) / c).ceil().max(1.0))
            .fold(f64::INFINITY, f64::min);
        let cycles = if cycles.is_finite() { cycles } else { 1.0 };
        for (s, c) in self.streams.iter_mut().zip(credits) {
            if eligible(s) {
                s.deficit += cycles * c;
            }
        }
    }

    fn commit(&mut self, idx: usize, limit: u64) -> Grant {
        let stream = &mut self.streams[idx];
        let bytes = limit.min(stream.remaining());
        let grant = Grant {
            stream: stream.id,
            bytes,
            offset: stream.bytes_sent,
            finished: bytes == stream.remaining(),
        };
        stream.bytes_sent += bytes;
        if self.strategy.is_weighted() && stream.priority.incremental {
            stream.deficit = (stream.deficit - bytes as f64).max(0.0);
        }
        if grant.finished {
            self.streams.remove(idx);
            // Cannot fail: the remaining ids were unique before the removal.
            let _ = self.refresh_weights();
        }
        grant
    }
}

/// Whether `key` lies in the not-yet-visited part of the current cycle,
/// i.e. cyclically after `cursor` and at or before `anchor`.
fn in_pending_arc(key: Key, cursor: Option<Key>, anchor: Option<Key>) -> bool {
    let key = Some(key);
    match cursor.cmp(&anchor) {
        std::cmp::Ordering::Equal => false,
        std::cmp::Ordering::Less => cursor < key && key <= anchor,
        std::cmp::Ordering::Greater => key > cursor || key <= anchor,
    }
}

//! Delivery traces, their CSV form, and consistency checks.
//!
//! CSV layout:
//!
//! ```text
//! # bandwidth_bytes_per_sec=10000000 one_way_delay_ms=10 loss_rate=0.0005 seed=7 quantum=1200 strategy=weighted-a1 static_weights=false
//! time_ms,stream_id,kind,bytes
//! 0,0,request,0
//! 10,0,grant,1200
//! ...
//! ```
//!
//! `kind` is one of `request`, `grant`, `retransmit`, `lost`, `complete`.
//! `bytes` is zero for `request` and `complete`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use super::LinkParams;
use crate::manifest::ResourceManifest;
use crate::scheduler::{Quantum, Strategy};
use crate::weights::{Alpha, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    RequestIssued,
    GrantSent(u64),
    Retransmit(u64),
    PacketLost(u64),
    ResourceComplete,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::RequestIssued => "request",
            EventKind::GrantSent(_) => "grant",
            EventKind::Retransmit(_) => "retransmit",
            EventKind::PacketLost(_) => "lost",
            EventKind::ResourceComplete => "complete",
        }
    }

    pub fn bytes(self) -> u64 {
        match self {
            EventKind::GrantSent(b) | EventKind::Retransmit(b) | EventKind::PacketLost(b) => b,
            EventKind::RequestIssued | EventKind::ResourceComplete => 0,
        }
    }

    /// Tie-break rank among events with equal time and stream.
    pub(crate) fn rank(self) -> u8 {
        match self {
            EventKind::RequestIssued => 0,
            EventKind::GrantSent(_) => 1,
            EventKind::Retransmit(_) => 2,
            EventKind::PacketLost(_) => 3,
            EventKind::ResourceComplete => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time_ms: f64,
    pub stream: StreamId,
    pub kind: EventKind,
}

/// Run configuration recorded at the top of every trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHeader {
    pub link: LinkParams,
    pub quantum: Quantum,
    pub strategy: Strategy,
    pub static_weights: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl DeliveryTrace {
    /// Time of each stream's `complete` event. Streams with several
    /// completions keep the last one; [`replay_check`] flags them.
    pub fn completion_times(&self) -> BTreeMap<StreamId, f64> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::ResourceComplete)
            .map(|e| (e.stream, e.time_ms))
            .collect()
    }

    pub fn completion_time(&self, stream: StreamId) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.stream == stream && e.kind == EventKind::ResourceComplete)
            .map(|e| e.time_ms)
    }

    /// First-transmission bytes per stream.
    pub fn granted_bytes(&self) -> BTreeMap<StreamId, u64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let EventKind::GrantSent(b) = e.kind {
                *out.entry(e.stream).or_insert(0) += b;
            }
        }
        out
    }

    /// `(stream, bytes)` of every first transmission, in send order.
    pub fn grant_sequence(&self) -> Vec<(StreamId, u64)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::GrantSent(b) => Some((e.stream, b)),
                _ => None,
            })
            .collect()
    }

    pub fn transmissions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::GrantSent(_) | EventKind::Retransmit(_)))
            .count()
    }

    pub fn losses(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::PacketLost(_)))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let mut out = format!(
            "# bandwidth_bytes_per_sec={} one_way_delay_ms={} loss_rate={} seed={} quantum={} strategy={} static_weights={}\n",
            h.link.bandwidth_bytes_per_sec,
            h.link.one_way_delay_ms,
            h.link.loss_rate,
            h.link.seed,
            h.quantum.bytes(),
            h.strategy.label(),
            h.static_weights,
        );
        out.push_str("time_ms,stream_id,kind,bytes\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.time_ms, e.stream, e.kind.name(), e.kind.bytes());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TraceParseError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, first) = lines.next().ok_or(TraceParseError::new(1, "empty input"))?;
        let header = parse_header(first).map_err(|reason| TraceParseError { line: n, reason })?;
        match lines.next() {
            Some((_, "time_ms,stream_id,kind,bytes")) => {}
            Some((n, _)) => return Err(TraceParseError::new(n, "expected column header")),
            None => return Err(TraceParseError::new(n + 1, "missing column header")),
        }
        let mut events = Vec::new();
        for (n, line) in lines {
            events.push(parse_row(line).map_err(|reason| TraceParseError { line: n, reason })?);
        }
        Ok(DeliveryTrace { header, events })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

impl TraceParseError {
    fn new(line: usize, reason: &str) -> Self {
        TraceParseError {
            line,
            reason: reason.to_owned(),
        }
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, String> {
    let body = line.strip_prefix("# ").ok_or("header must start with '# '")?;
    let mut fields = BTreeMap::new();
    for pair in body.split(' ') {
        let (k, v) = pair.split_once('=').ok_or_else(|| format!("bad header field {pair:?}"))?;
        if fields.insert(k, v).is_some() {
            return Err(format!("duplicate header field {k}"));
        }
    }
    fn take<T: FromStr>(fields: &BTreeMap<&str, &str>, key: &str) -> Result<T, String> {
        fields
            .get(key)
            .ok_or_else(|| format!("missing header field {key}"))?
            .parse()
            .map_err(|_| format!("invalid value for {key}"))
    }
    if fields.len() != 7 {
        return Err("header must have exactly 7 fields".into());
    }
    let link = LinkParams {
        bandwidth_bytes_per_sec: take(&fields, "bandwidth_bytes_per_sec")?,
        one_way_delay_ms: take(&fields, "one_way_delay_ms")?,
        loss_rate: take(&fields, "loss_rate")?,
        seed: take(&fields, "seed")?,
    };
    link.validate().map_err(|e| e.to_string())?;
    let quantum = Quantum::new(take(&fields, "quantum")?).map_err(|e| e.to_string())?;
    let strategy: Strategy = take(&fields, "strategy")?;
    Ok(TraceHeader {
        link,
        quantum,
        strategy,
        static_weights: take(&fields, "static_weights")?,
    })
}

fn parse_row(line: &str) -> Result<TraceEvent, String> {
    let mut cols = line.split(',');
    let (Some(time), Some(stream), Some(kind), Some(bytes), None) =
        (cols.next(), cols.next(), cols.next(), cols.next(), cols.next())
    else {
        return Err("expected 4 columns".into());
    };
    let time_ms: f64 = time.parse().map_err(|_| format!("bad time {time:?}"))?;
    if !time_ms.is_finite() {
        return Err(format!("bad time {time:?}"));
    }
    let stream = StreamId(stream.parse().map_err(|_| format!("bad stream id {stream:?}"))?);
    let bytes: u64 = bytes.parse().map_err(|_| format!("bad byte count {bytes:?}"))?;
    let kind = match kind {
        "request" | "complete" if bytes != 0 => return Err(format!("{kind} rows carry no bytes")),
        "request" => EventKind::RequestIssued,
        "complete" => EventKind::ResourceComplete,
        "grant" => EventKind::GrantSent(bytes),
        "retransmit" => EventKind::Retransmit(bytes),
        "lost" => EventKind::PacketLost(bytes),
        other => return Err(format!("unknown event kind {other:?}")),
    };
    Ok(TraceEvent { time_ms, stream, kind })
}

impl FromStr for Strategy {
    type Err = String;

    /// Accepts the labels written by [`Strategy::label`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential-fifo" => Ok(Strategy::SequentialFifo),
            "sequential-urgency" => Ok(Strategy::SequentialByUrgency),
            "round-robin" => Ok(Strategy::RoundRobin),
            _ => {
                let a = s
                    .strip_prefix("weighted-a")
                    .ok_or_else(|| format!("unknown strategy {s:?}"))?;
                let a: f64 = a.parse().map_err(|_| format!("bad alpha in {s:?}"))?;
                Alpha::new(a)
                    .map(Strategy::WeightedIncremental)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// A broken trace invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TimeRegression { index: usize, time_ms: f64, previous_ms: f64 },
    BytesMismatch { stream: StreamId, expected: u64, granted: u64 },
    MissingCompletion { stream: StreamId },
    DuplicateCompletion { stream: StreamId },
    MissingRequest { stream: StreamId },
    CompletionBeforeRequest { stream: StreamId },
    UnknownStream { stream: StreamId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TimeRegression {
                index,
                time_ms,
                previous_ms,
            } => write!(f, "time regression at event {index}: {time_ms} ms after {previous_ms} ms"),
            Violation::BytesMismatch {
                stream,
                expected,
                granted,
            } => write!(f, "bytes mismatch on stream {stream}: granted {granted} of {expected}"),
            Violation::MissingCompletion { stream } => write!(f, "stream {stream} never completes"),
            Violation::DuplicateCompletion { stream } => write!(f, "stream {stream} completes more than once"),
            Violation::MissingRequest { stream } => write!(f, "stream {stream} is never requested"),
            Violation::CompletionBeforeRequest { stream } => {
                write!(f, "stream {stream} completes before it is requested")
            }
            Violation::UnknownStream { stream } => write!(f, "stream {stream} is not in the manifest"),
        }
    }
}

/// Re-verifies a trace against its manifest. An empty result means the
/// trace is consistent.
pub fn replay_check(trace: &DeliveryTrace, manifest: &ResourceManifest) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n = manifest.len();

    let mut previous = f64::NEG_INFINITY;
    for (index, e) in trace.events.iter().enumerate() {
        if e.time_ms < previous {
            violations.push(Violation::TimeRegression {
                index,
                time_ms: e.time_ms,
                previous_ms: previous,
            });
        }
        previous = previous.max(e.time_ms);
        if e.stream.0 >= n as u64 {
            violations.push(Violation::UnknownStream { stream: e.stream });
        }
    }

    let granted = trace.granted_bytes();
    for (i, r) in manifest.resources().iter().enumerate() {
        let stream = StreamId(i as u64);
        let got = granted.get(&stream).copied().unwrap_or(0);
        if got != r.size_bytes {
            violations.push(Violation::BytesMismatch {
                stream,
                expected: r.size_bytes,
                granted: got,
            });
        }
        let completions: Vec<f64> = trace
            .events
            .iter()
            .filter(|e| e.stream == stream && e.kind == EventKind::ResourceComplete)
            .map(|e| e.time_ms)
            .collect();
        let request = trace
            .events
            .iter()
            .find(|e| e.stream == stream && e.kind == EventKind::RequestIssued)
            .map(|e| e.time_ms);
        match completions.as_slice() {
            [] => violations.push(Violation::MissingCompletion { stream }),
            [t] => {
                if request.is_some_and(|r| *t < r) {
                    violations.push(Violation::CompletionBeforeRequest { stream });
                }
            }
            _ => violations.push(Violation::DuplicateCompletion { stream }),
        }
        if request.is_none() {
            violations.push(Violation::MissingRequest { stream });
        }
    }
    violations
}

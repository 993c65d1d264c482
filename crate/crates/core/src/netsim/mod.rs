//! Discrete-event simulation of a page load over one link.
//!
//! The link is a fixed-rate pipe with a constant one-way delay and
//! independent per-packet loss; there is no congestion control. The client
//! requests every root resource at t = 0. Each request reaches the server
//! one one-way delay later and opens a stream on the server's
//! [`Scheduler`]. Whenever the link is free the server sends either a due
//! retransmission or the scheduler's next grant as one packet, which holds
//! the link for `bytes / bandwidth` and lands one one-way delay after it
//! leaves. A lost packet is sent again one round trip after it left, and may
//! be lost again. A resource completes when its last byte lands, at which
//! point the client requests every resource it triggers.

mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifest::{ManifestError, ResourceManifest};
use crate::scheduler::{Quantum, Scheduler, SchedulerError, StreamEvent, StreamState, Strategy};
use crate::weights::{compute_weight_table, RequestSet, StreamId, WeightError};

pub use trace::{replay_check, DeliveryTrace, EventKind, TraceEvent, TraceHeader, TraceParseError, Violation};

pub const DEFAULT_BANDWIDTH_BYTES_PER_SEC: u64 = 10_000_000;
pub const DEFAULT_ONE_WAY_DELAY_MS: f64 = 10.0;
pub const DEFAULT_LOSS_RATE: f64 = 0.0005;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid link parameters: {0}")]
    Link(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub bandwidth_bytes_per_sec: u64,
    pub one_way_delay_ms: f64,
    pub loss_rate: f64,
    pub seed: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            bandwidth_bytes_per_sec: DEFAULT_BANDWIDTH_BYTES_PER_SEC,
            one_way_delay_ms: DEFAULT_ONE_WAY_DELAY_MS,
            loss_rate: DEFAULT_LOSS_RATE,
            seed: 0,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.bandwidth_bytes_per_sec == 0 {
            return Err(SimError::Link("bandwidth must be positive".into()));
        }
        if !(self.one_way_delay_ms >= 0.0 && self.one_way_delay_ms.is_finite()) {
            return Err(SimError::Link(format!(
                "one-way delay {} ms must be finite and non-negative",
                self.one_way_delay_ms
            )));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(SimError::Link(format!("loss rate {} must be in [0, 1)", self.loss_rate)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn serialization_ms(&self, bytes: u64) -> f64 {
        bytes as f64 * 1000.0 / self.bandwidth_bytes_per_sec as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub link: LinkParams,
    pub strategy: Strategy,
    pub quantum: Quantum,
    /// Compute shares once over the whole manifest instead of over the
    /// streams active at each moment.
    pub static_weights: bool,
}

impl SimConfig {
    pub fn new(link: LinkParams, strategy: Strategy) -> Self {
        SimConfig {
            link,
            strategy,
            quantum: Quantum::default(),
            static_weights: false,
        }
    }
}

pub fn simulate(
    manifest: &ResourceManifest,
    link: LinkParams,
    strategy: Strategy,
    quantum: Quantum,
) -> Result<DeliveryTrace, SimError> {
    simulate_with(
        manifest,
        &SimConfig {
            link,
            strategy,
            quantum,
            static_weights: false,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    /// Bytes of a stream land at the client.
    Deliver { bytes: u64 },
    /// A request lands at the server.
    Open,
    /// A lost packet is ready to go again.
    Retransmit { bytes: u64 },
    LinkFree,
}

impl Action {
    fn rank(self) -> u8 {
        match self {
            Action::Deliver { .. } => 0,
            Action::Open => 1,
            Action::Retransmit { .. } => 2,
            Action::LinkFree => 3,
        }
    }
}

/// Queue entry, ordered by (time, action rank, stream, insertion order).
struct Pending {
    time: f64,
    stream: usize,
    seq: u64,
    action: Action,
}

impl Pending {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.action.rank().cmp(&other.action.rank()))
            .then(self.stream.cmp(&other.stream))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so BinaryHeap pops the earliest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_key(self)
    }
}

struct Sim<'a> {
    manifest: &'a ResourceManifest,
    link: LinkParams,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Pending>,
    seq: u64,
    scheduler: Scheduler,
    retransmits: VecDeque<(usize, u64)>,
    link_busy_until: f64,
    received: Vec<u64>,
    dependents: Vec<Vec<usize>>,
    events: Vec<TraceEvent>,
}

impl Sim<'_> {
    fn push(&mut self, time: f64, stream: usize, action: Action) {
        self.seq += 1;
        self.queue.push(Pending {
            time,
            stream,
            seq: self.seq,
            action,
        });
    }

    fn record(&mut self, time_ms: f64, stream: usize, kind: EventKind) {
        self.events.push(TraceEvent {
            time_ms,
            stream: StreamId(stream as u64),
            kind,
        });
    }

    fn request(&mut self, now: f64, stream: usize) {
        self.record(now, stream, EventKind::RequestIssued);
        self.push(now + self.link.one_way_delay_ms, stream, Action::Open);
    }

    fn run(mut self) -> Result<Vec<TraceEvent>, SimError> {
        let roots: Vec<usize> = self.manifest.roots().collect();
        for r in roots {
            self.request(0.0, r);
        }
        while let Some(Pending {
            time, stream, action, ..
        }) = self.queue.pop()
        {
            match action {
                Action::Deliver { bytes } => self.deliver(time, stream, bytes),
                Action::Open => {
                    let r = &self.manifest.resources()[stream];
                    let state =
                        StreamState::new(StreamId(stream as u64), r.priority(), r.size_bytes, stream as u64)
                            .opened_at(time);
                    self.scheduler.on_stream_event(StreamEvent::Open(state))?;
                    self.try_send(time)?;
                }
                Action::Retransmit { bytes } => {
                    self.retransmits.push_back((stream, bytes));
                    self.try_send(time)?;
                }
                Action::LinkFree => self.try_send(time)?,
            }
        }
        Ok(self.events)
    }

    fn deliver(&mut self, now: f64, stream: usize, bytes: u64) {
        self.received[stream] += bytes;
        if self.received[stream] == self.manifest.resources()[stream].size_bytes {
            self.record(now, stream, EventKind::ResourceComplete);
            for child in std::mem::take(&mut self.dependents[stream]) {
                self.request(now, child);
            }
        }
    }

    fn try_send(&mut self, now: f64) -> Result<(), SimError> {
        if self.link_busy_until > now {
            return Ok(());
        }
        let (stream, bytes, kind) = if let Some((stream, bytes)) = self.retransmits.pop_front() {
            (stream, bytes, EventKind::Retransmit(bytes))
        } else if !self.scheduler.is_idle() {
            let g = self.scheduler.next_allocation()?;
            (g.stream.0 as usize, g.bytes, EventKind::GrantSent(g.bytes))
        } else {
            return Ok(());
        };
        self.record(now, stream, kind);
        let departed = now + self.link.serialization_ms(bytes);
        self.link_busy_until = departed;
        self.push(departed, stream, Action::LinkFree);
        let lost = self.rng.gen::<f64>() < self.link.loss_rate;
        if lost {
            self.record(now, stream, EventKind::PacketLost(bytes));
            self.push(departed + 2.0 * self.link.one_way_delay_ms, stream, Action::Retransmit { bytes });
        } else {
            self.push(departed + self.link.one_way_delay_ms, stream, Action::Deliver { bytes });
        }
        Ok(())
    }
}

/// Runs one page load and returns its trace.
pub fn simulate_with(manifest: &ResourceManifest, config: &SimConfig) -> Result<DeliveryTrace, SimError> {
    config.link.validate()?;
    manifest.check()?;

    let mut scheduler = Scheduler::new(config.strategy, config.quantum);
    if let (true, Strategy::WeightedIncremental(alpha)) = (config.static_weights, config.strategy) {
        let set = RequestSet::new(
            manifest
                .resources()
                .iter()
                .enumerate()
                .map(|(i, r)| (StreamId(i as u64), r.resolved_urgency()))
                .collect(),
        )?;
        scheduler = scheduler.with_static_weights(compute_weight_table(&set, alpha)?);
    }

    let sim = Sim {
        manifest,
        link: config.link,
        rng: ChaCha8Rng::seed_from_u64(config.link.seed),
        queue: BinaryHeap::new(),
        seq: 0,
        scheduler,
        retransmits: VecDeque::new(),
        link_busy_until: 0.0,
        received: vec![0; manifest.len()],
        dependents: manifest.dependents(),
        events: Vec::new(),
    };
    let mut events = sim.run()?;
    events.sort_by(|a, b| {
        a.time_ms
            .total_cmp(&b.time_ms)
            .then(a.stream.cmp(&b.stream))
            .then(a.kind.rank().cmp(&b.kind.rank()))
    });
    Ok(DeliveryTrace {
        header: TraceHeader {
            link: config.link,
            quantum: config.quantum,
            strategy: config.strategy,
            static_weights: config.static_weights,
        },
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Resource;
    use crate::weights::Alpha;

    fn lossless(bandwidth: u64, delay: f64) -> LinkParams {
        LinkParams {
            bandwidth_bytes_per_sec: bandwidth,
            one_way_delay_ms: delay,
            loss_rate: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn single_packet_timing() {
        let m = ResourceManifest::new("one", vec![Resource::new("a", 1200)]).unwrap();
        let t = simulate(&m, lossless(1_200_000, 10.0), Strategy::SequentialFifo, Quantum::default()).unwrap();
        assert_eq!(t.completion_time(StreamId(0)), Some(21.0));
        assert!(replay_check(&t, &m).is_empty());
    }

    #[test]
    fn zero_delay_round_robin_is_symmetric() {
        let m = ResourceManifest::new("two", vec![Resource::new("a", 60_000), Resource::new("b", 60_000)]).unwrap();
        let link = lossless(1_000_000, 0.0);
        let t = simulate(&m, link, Strategy::RoundRobin, Quantum::default()).unwrap();
        let a = t.completion_time(StreamId(0)).unwrap();
        let b = t.completion_time(StreamId(1)).unwrap();
        assert!((a - b).abs() <= link.serialization_ms(1200) + 1e-9);
    }

    #[test]
    fn dependent_request_waits_for_trigger() {
        let m = ResourceManifest::new(
            "dep",
            vec![Resource::new("a", 1200), Resource::new("b", 1200).discovered_after("a")],
        )
        .unwrap();
        let t = simulate(&m, lossless(1_200_000, 10.0), Strategy::SequentialFifo, Quantum::default()).unwrap();
        // a lands at 21; b's request leaves then, arrives at 31, lands at 42.
        assert_eq!(t.completion_time(StreamId(1)), Some(42.0));
        let req = t
            .events
            .iter()
            .find(|e| e.stream == StreamId(1) && e.kind == EventKind::RequestIssued)
            .unwrap();
        assert_eq!(req.time_ms, 21.0);
    }

    #[test]
    fn loss_delays_by_a_round_trip() {
        let m = ResourceManifest::new("one", vec![Resource::new("a", 1200)]).unwrap();
        // Find a seed whose first draw is a loss at a high loss rate.
        let (seed, trace) = (0..100)
            .map(|seed| {
                let link = LinkParams {
                    loss_rate: 0.5,
                    ..lossless(1_200_000, 10.0).with_seed(seed)
                };
                (seed, simulate(&m, link, Strategy::RoundRobin, Quantum::default()).unwrap())
            })
            .find(|(_, t)| t.losses() == 1)
            .unwrap();
        // Sent 10..11, retransmitted at 11 + 20 = 31, lands at 42.
        assert_eq!(trace.completion_time(StreamId(0)), Some(42.0), "seed {seed}");
        assert!(replay_check(&trace, &m).is_empty());
    }

    #[test]
    fn static_weights_run() {
        let m = ResourceManifest::new(
            "s",
            vec![
                Resource::new("a", 50_000),
                Resource::new("b", 50_000).with_urgency(crate::priority::Urgency::MOST_URGENT),
            ],
        )
        .unwrap();
        let config = SimConfig {
            static_weights: true,
            ..SimConfig::new(LinkParams::default(), Strategy::WeightedIncremental(Alpha::STRICT))
        };
        let t = simulate_with(&m, &config).unwrap();
        assert!(replay_check(&t, &m).is_empty());
        assert!(t.header.static_weights);
    }

    #[test]
    fn invalid_links_rejected() {
        let m = ResourceManifest::new("one", vec![Resource::new("a", 1)]).unwrap();
        for link in [
            LinkParams { bandwidth_bytes_per_sec: 0, ..LinkParams::default() },
            LinkParams { loss_rate: 1.0, ..LinkParams::default() },
            LinkParams { one_way_delay_ms: -1.0, ..LinkParams::default() },
            LinkParams { one_way_delay_ms: f64::NAN, ..LinkParams::default() },
        ] {
            assert!(matches!(
                simulate(&m, link, Strategy::RoundRobin, Quantum::default()),
                Err(SimError::Link(_))
            ));
        }
    }

    #[test]
    fn csv_round_trip_and_corruption() {
        let m = ResourceManifest::new(
            "s",
            vec![Resource::new("a", 5000), Resource::new("b", 3000).discovered_after("a")],
        )
        .unwrap();
        let link = LinkParams { loss_rate: 0.2, seed: 9, ..LinkParams::default() };
        let t = simulate(&m, link, Strategy::WeightedIncremental(Alpha::new(0.25).unwrap()), Quantum::default())
            .unwrap();
        let parsed = DeliveryTrace::from_csv(&t.to_csv()).unwrap();
        assert_eq!(parsed, t);

        let mut truncated = t.clone();
        let last_grant = truncated
            .events
            .iter()
            .rposition(|e| matches!(e.kind, EventKind::GrantSent(_)))
            .unwrap();
        truncated.events.remove(last_grant);
        let v = replay_check(&truncated, &m);
        assert!(v.iter().any(|x| x.to_string().contains("bytes mismatch")), "{v:?}");

        let mut shuffled = t.clone();
        let last = shuffled.events.len() - 1;
        shuffled.events.swap(0, last);
        let v = replay_check(&shuffled, &m);
        assert!(v.iter().any(|x| x.to_string().contains("time regression")), "{v:?}");
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let good = DeliveryTrace {
            header: TraceHeader {
                link: LinkParams::default(),
                quantum: Quantum::default(),
                strategy: Strategy::RoundRobin,
                static_weights: false,
            },
            events: vec![],
        }
        .to_csv();
        assert!(DeliveryTrace::from_csv(&good).is_ok());
        for bad in [
            String::new(),
            "# nope\n".to_owned(),
            good.replace("round-robin", "weighted-a2"),
            good.replace("loss_rate=0.0005", "loss_rate=1"),
            good.replace("time_ms", "t"),
            format!("{good}1,0,grant\n"),
            format!("{good}1,0,teleport,5\n"),
            format!("{good}1,0,request,5\n"),
            format!("{good}NaN,0,grant,5\n"),
            format!("{good}1,-1,grant,5\n"),
        ] {
            assert!(DeliveryTrace::from_csv(&bad).is_err(), "{bad:?}");
        }
    }
}

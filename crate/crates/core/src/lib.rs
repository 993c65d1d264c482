//! Weighted incremental stream scheduling for HTTP/3 extensible priorities.
//!
//! - [`priority`]: urgency / incremental types, `Priority` field parsing and
//!   the Chromium tier mapping.
//! - [`weights`]: per-stream bandwidth shares from urgency and a weight
//!   factor alpha.
//! - [`scheduler`]: sequential, round-robin and weighted incremental byte
//!   schedulers behind one interface.
//! - [`manifest`]: page resource manifests (JSON) and a synthetic generator.
//! - [`netsim`]: deterministic single-link delivery simulator and its traces.
//! - [`metrics`]: proxy QoE metrics and improvement-over-baseline tables.

pub mod manifest;
pub mod metrics;
pub mod netsim;
pub mod priority;
pub mod scheduler;
pub mod weights;

pub use manifest::{load_manifest, Resource, ResourceManifest, RoleFlag};
pub use netsim::{simulate, simulate_with, DeliveryTrace, LinkParams, SimConfig};
pub use priority::{map_chromium_priority, parse_priority_field, ChromiumPriority, PriorityParams, Urgency};
pub use scheduler::{Grant, Quantum, Scheduler, StreamEvent, StreamState, Strategy};
pub use weights::{compute_weight_table, Alpha, RequestSet, StreamId, WeightTable};

//! Bandwidth shares for a set of concurrent requests.
//!
//! Each request `i` gets an initial weight
//!
//! ```text
//! w'_i = alpha / (u_i + r_u) + (1 - alpha) / n
//! ```
//!
//! where `u_i` is its urgency, `r_u` is the fraction of the `n` requests that
//! share urgency `u_i`, and `alpha` in `[0, 1]` slides between a uniform split
//! (`alpha = 0`) and a purely urgency-driven one (`alpha = 1`). Shares are the
//! initial weights normalized to sum to one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::priority::Urgency;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("weight computation needs at least one request")]
    EmptySet,
    #[error("alpha {0} is outside [0, 1]")]
    AlphaRange(f64),
    #[error("duplicate stream id {0}")]
    DuplicateStream(StreamId),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Opaque stream identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId(pub u64);

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Weight factor, validated to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const UNIFORM: Alpha = Alpha(0.0);
    pub const STRICT: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Self, WeightError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Alpha(value))
        } else {
            Err(WeightError::AlphaRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The requests competing for the link, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestSet {
    entries: Vec<(StreamId, Urgency)>,
}

impl RequestSet {
    pub fn new(entries: Vec<(StreamId, Urgency)>) -> Result<Self, WeightError> {
        let mut seen = BTreeSet::new();
        for (id, _) in &entries {
            if !seen.insert(*id) {
                return Err(WeightError::DuplicateStream(*id));
            }
        }
        Ok(RequestSet { entries })
    }

    pub fn entries(&self) -> &[(StreamId, Urgency)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn count_at(&self, u: Urgency) -> usize {
        self.entries.iter().filter(|(_, v)| *v == u).count()
    }
}

/// Normalized shares for one request set and alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub alpha: Alpha,
    pub shares: BTreeMap<StreamId, f64>,
    pub urgency_ratios: BTreeMap<Urgency, f64>,
}

impl WeightTable {
    pub fn share(&self, id: StreamId) -> Option<f64> {
        self.shares.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }
}

/// Fraction of requests at urgency `u`.
pub fn urgency_ratio(requests: &RequestSet, u: Urgency) -> Result<f64, WeightError> {
    if requests.is_empty() {
        return Err(WeightError::EmptySet);
    }
    Ok(requests.count_at(u) as f64 / requests.len() as f64)
}

/// Initial (unnormalized) weight of one request.
pub fn initial_weight(urgency: Urgency, ratio: f64, alpha: Alpha, n: usize) -> Result<f64, WeightError> {
    if n == 0 {
        return Err(WeightError::EmptySet);
    }
    if !(ratio > 0.0) {
        return Err(WeightError::Invariant(format!(
            "urgency ratio must be positive, got {ratio}"
        )));
    }
    let a = alpha.value();
    let urgency_term = 1.0 / (f64::from(urgency.level()) + ratio);
    let uniform_term = 1.0 / n as f64;
    Ok(a * urgency_term + (1.0 - a) * uniform_term)
}

/// Scales positive weights so they sum to one.
///
/// When every weight is identical each share is exactly `1/n`.
pub fn normalize(initial: &BTreeMap<StreamId, f64>) -> Result<BTreeMap<StreamId, f64>, WeightError> {
    let first = *initial.values().next().ok_or(WeightError::EmptySet)?;
    if let Some((id, w)) = initial.iter().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
        return Err(WeightError::Invariant(format!(
            "stream {id} has non-positive weight {w}"
        )));
    }
    if initial.values().all(|w| *w == first) {
        let share = 1.0 / initial.len() as f64;
        return Ok(initial.keys().map(|id| (*id, share)).collect());
    }
    let total: f64 = initial.values().sum();
    Ok(initial.iter().map(|(id, w)| (*id, w / total)).collect())
}

/// Shares for every request in the set.
pub fn compute_weight_table(requests: &RequestSet, alpha: Alpha) -> Result<WeightTable, WeightError> {
    if requests.is_empty() {
        return Err(WeightError::EmptySet);
    }
    let n = requests.len();
    let mut urgency_ratios = BTreeMap::new();
    for (_, u) in requests.entries() {
        if !urgency_ratios.contains_key(u) {
            urgency_ratios.insert(*u, urgency_ratio(requests, *u)?);
        }
    }
    let mut initial = BTreeMap::new();
    for (id, u) in requests.entries() {
        initial.insert(*id, initial_weight(*u, urgency_ratios[u], alpha, n)?);
    }
    let shares = normalize(&initial)?;
    Ok(WeightTable {
        alpha,
        shares,
        urgency_ratios,
    })
}

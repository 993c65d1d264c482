//! Proxy QoE metrics over delivery traces.
//!
//! Browser paint and interactivity metrics need a rendering engine, so the
//! report uses delivery-time stand-ins keyed off manifest role flags:
//!
//! | field             | stand-in for | value                                        |
//! |-------------------|--------------|----------------------------------------------|
//! | `proxy_fcp_ms`    | FCP          | completion of the last `render_critical` one |
//! | `proxy_lcp_ms`    | LCP          | completion of the `lcp_candidate`            |
//! | `proxy_tti_ms`    | TTI          | completion of the last `script`              |
//! | `page_complete_ms`| -            | completion of the last resource              |
//!
//! A proxy whose flag no resource carries is absent. Speed index, blocking
//! time and layout shift have no delivery-time analogue and are not
//! reported.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::manifest::{ResourceManifest, RoleFlag};
use crate::netsim::{DeliveryTrace, EventKind};
use crate::weights::StreamId;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trace does not match manifest: {0}")]
pub struct InputError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    ProxyFcp,
    ProxyLcp,
    ProxyTti,
    PageComplete,
    MeanCompletion,
    MedianCompletion,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::ProxyFcp,
        Metric::ProxyLcp,
        Metric::ProxyTti,
        Metric::PageComplete,
        Metric::MeanCompletion,
        Metric::MedianCompletion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ProxyFcp => "proxy_fcp_ms",
            Metric::ProxyLcp => "proxy_lcp_ms",
            Metric::ProxyTti => "proxy_tti_ms",
            Metric::PageComplete => "page_complete_ms",
            Metric::MeanCompletion => "mean_completion_ms",
            Metric::MedianCompletion => "median_completion_ms",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoeReport {
    pub proxy_fcp_ms: Option<f64>,
    pub proxy_lcp_ms: Option<f64>,
    pub proxy_tti_ms: Option<f64>,
    pub page_complete_ms: f64,
    pub mean_completion_ms: f64,
    pub median_completion_ms: f64,
}

impl QoeReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::ProxyFcp => self.proxy_fcp_ms,
            Metric::ProxyLcp => self.proxy_lcp_ms,
            Metric::ProxyTti => self.proxy_tti_ms,
            Metric::PageComplete => Some(self.page_complete_ms),
            Metric::MeanCompletion => Some(self.mean_completion_ms),
            Metric::MedianCompletion => Some(self.median_completion_ms),
        }
    }
}

/// Median; for an even count, the midpoint of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let Some(m) = mean(values) else { return 0.0 };
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

pub fn derive_report(trace: &DeliveryTrace, manifest: &ResourceManifest) -> Result<QoeReport, InputError> {
    let n = manifest.len();
    let mut completion: Vec<Option<f64>> = vec![None; n];
    for e in &trace.events {
        let idx = usize::try_from(e.stream.0)
            .ok()
            .filter(|i| *i < n)
            .ok_or_else(|| InputError(format!("stream {} is not in the manifest", e.stream)))?;
        if e.kind == EventKind::ResourceComplete {
            if completion[idx].is_some() {
                return Err(InputError(format!("stream {} completes twice", e.stream)));
            }
            completion[idx] = Some(e.time_ms);
        }
    }
    let times: Vec<f64> = completion
        .iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| InputError(format!("stream {} never completes", StreamId(i as u64)))))
        .collect::<Result<_, _>>()?;

    let last_with = |flag: RoleFlag| {
        manifest
            .resources()
            .iter()
            .zip(&times)
            .filter(|(r, _)| r.has_flag(flag))
            .map(|(_, t)| *t)
            .reduce(f64::max)
    };
    Ok(QoeReport {
        proxy_fcp_ms: last_with(RoleFlag::RenderCritical),
        proxy_lcp_ms: last_with(RoleFlag::LcpCandidate),
        proxy_tti_ms: last_with(RoleFlag::Script),
        page_complete_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_completion_ms: mean(&times).unwrap_or(0.0),
        median_completion_ms: median(&times).unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub metric: Metric,
    pub variant: String,
    pub baseline_value: f64,
    pub variant_value: f64,
    /// Positive means the variant is faster.
    pub improvement_pct: f64,
}

/// Percentage by which `variant` improves on `baseline` for a
/// lower-is-better metric.
pub fn improvement_pct(baseline: f64, variant: f64) -> f64 {
    (baseline - variant) / baseline * 100.0
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImprovementTable {
    pub cells: Vec<ComparisonCell>,
    /// Cells that could not be computed, with the reason.
    pub warnings: Vec<String>,
}

impl ImprovementTable {
    pub fn cell(&self, metric: Metric, variant: &str) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.metric == metric && c.variant == variant)
    }
}

/// One cell per (metric, variant), metrics outermost.
pub fn improvement_table(baseline: &QoeReport, variants: &[(String, QoeReport)]) -> ImprovementTable {
    let mut table = ImprovementTable::default();
    for metric in Metric::ALL {
        for (label, report) in variants {
            let Some(base) = baseline.get(metric) else {
                table.warnings.push(format!("{metric}: absent from baseline, skipped for {label}"));
                continue;
            };
            if base <= 0.0 {
                table.warnings.push(format!("{metric}: baseline is {base}, skipped for {label}"));
                continue;
            }
            let Some(value) = report.get(metric) else {
                table.warnings.push(format!("{metric}: absent from {label}, skipped"));
                continue;
            };
            table.cells.push(ComparisonCell {
                metric,
                variant: label.clone(),
                baseline_value: base,
                variant_value: value,
                improvement_pct: improvement_pct(base, value),
            });
        }
    }
    table
}

/// How per-site improvements are folded into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl Aggregate {
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        match self {
            Aggregate::Mean => mean(values),
            Aggregate::Median => median(values),
        }
    }
}

impl std::str::FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "median" => Ok(Aggregate::Median),
            other => Err(format!("unknown aggregate {other:?} (expected mean or median)")),
        }
    }
}

/// Mean of each metric over several reports of the same configuration.
/// A metric absent from any report is absent from the result.
pub fn mean_report(reports: &[QoeReport]) -> BTreeMap<Metric, f64> {
    let mut out = BTreeMap::new();
    for metric in Metric::ALL {
        let values: Option<Vec<f64>> = reports.iter().map(|r| r.get(metric)).collect();
        if let Some(m) = values.as_deref().and_then(mean) {
            out.insert(metric, m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Resource;
    use crate::netsim::{LinkParams, TraceEvent, TraceHeader};
    use crate::scheduler::{Quantum, Strategy};

    fn trace(events: &[(f64, u64, EventKind)]) -> DeliveryTrace {
        DeliveryTrace {
            header: TraceHeader {
                link: LinkParams::default(),
                quantum: Quantum::default(),
                strategy: Strategy::RoundRobin,
                static_weights: false,
            },
            events: events
                .iter()
                .map(|(t, s, k)| TraceEvent {
                    time_ms: *t,
                    stream: StreamId(*s),
                    kind: *k,
                })
                .collect(),
        }
    }

    fn report(v: f64) -> QoeReport {
        QoeReport {
            proxy_fcp_ms: Some(v),
            proxy_lcp_ms: Some(v),
            proxy_tti_ms: Some(v),
            page_complete_ms: v,
            mean_completion_ms: v,
            median_completion_ms: v,
        }
    }

    #[test]
    fn single_resource_report() {
        let m = ResourceManifest::new("s", vec![Resource::new("a", 1200).with_flag(RoleFlag::LcpCandidate)])
            .unwrap();
        let r = derive_report(&trace(&[(21.0, 0, EventKind::ResourceComplete)]), &m).unwrap();
        assert_eq!(r.proxy_lcp_ms, Some(21.0));
        assert_eq!(r.page_complete_ms, 21.0);
        assert_eq!(r.proxy_tti_ms, None);
        assert_eq!(r.proxy_fcp_ms, None);
    }

    #[test]
    fn mean_and_median_of_two() {
        let m = ResourceManifest::new("s", vec![Resource::new("a", 1), Resource::new("b", 1)]).unwrap();
        let r = derive_report(
            &trace(&[(10.0, 0, EventKind::ResourceComplete), (30.0, 1, EventKind::ResourceComplete)]),
            &m,
        )
        .unwrap();
        assert_eq!(r.mean_completion_ms, 20.0);
        assert_eq!(r.median_completion_ms, 20.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn mismatches_are_input_errors() {
        let m = ResourceManifest::new("s", vec![Resource::new("a", 1)]).unwrap();
        assert!(derive_report(&trace(&[]), &m).is_err());
        assert!(derive_report(&trace(&[(1.0, 5, EventKind::ResourceComplete)]), &m).is_err());
        assert!(derive_report(
            &trace(&[(1.0, 0, EventKind::ResourceComplete), (2.0, 0, EventKind::ResourceComplete)]),
            &m
        )
        .is_err());
    }

    #[test]
    fn improvement_signs() {
        assert_eq!(improvement_pct(100.0, 80.0), 20.0);
        assert_eq!(improvement_pct(100.0, 100.0), 0.0);
        assert_eq!(improvement_pct(100.0, 125.0), -25.0);
    }

    #[test]
    fn identity_comparison_is_zero() {
        let r = report(42.0);
        let t = improvement_table(&r, &[("same".into(), r.clone())]);
        assert_eq!(t.cells.len(), Metric::ALL.len());
        assert!(t.cells.iter().all(|c| c.improvement_pct == 0.0));
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn absent_baseline_metric_is_skipped_with_warning() {
        let mut base = report(100.0);
        base.proxy_tti_ms = None;
        let t = improvement_table(&base, &[("v".into(), report(80.0))]);
        assert!(t.cell(Metric::ProxyTti, "v").is_none());
        assert_eq!(t.cell(Metric::ProxyLcp, "v").unwrap().improvement_pct, 20.0);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn aggregates() {
        assert_eq!(Aggregate::Mean.apply(&[1.0, 2.0, 6.0]), Some(3.0));
        assert_eq!(Aggregate::Median.apply(&[1.0, 2.0, 6.0]), Some(2.0));
        assert_eq!(Aggregate::Mean.apply(&[]), None);
        assert_eq!("median".parse::<Aggregate>(), Ok(Aggregate::Median));
        assert!((std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138_089_935_299_395).abs() < 1e-12);
    }

    #[test]
    fn reordering_simultaneous_events_does_not_change_report() {
        let m = ResourceManifest::new(
            "s",
            vec![
                Resource::new("a", 1).with_flag(RoleFlag::Script),
                Resource::new("b", 1).with_flag(RoleFlag::Script),
            ],
        )
        .unwrap();
        let x = trace(&[(5.0, 0, EventKind::ResourceComplete), (5.0, 1, EventKind::ResourceComplete)]);
        let y = trace(&[(5.0, 1, EventKind::ResourceComplete), (5.0, 0, EventKind::ResourceComplete)]);
        assert_eq!(derive_report(&x, &m).unwrap(), derive_report(&y, &m).unwrap());
    }
}

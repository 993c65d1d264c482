//! Experiment sweeps over manifest corpora: every strategy (and alpha, for
//! the weighted scheduler) on every manifest for several seeds, written out
//! as trace, report and improvement CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use weighted_eps::manifest::ManifestError;
use weighted_eps::metrics::{derive_report, improvement_table, mean_report, Aggregate, Metric, QoeReport};
use weighted_eps::{load_manifest, simulate_with, Alpha, LinkParams, Quantum, ResourceManifest, SimConfig, Strategy};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_ITERATIONS: u32 = 10;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: ManifestError,
    },
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SweepError {
    /// 1 for bad input, 2 for failures while running or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            SweepError::Config(_) | SweepError::Manifest { .. } => 1,
            SweepError::Runtime(_) | SweepError::Io { .. } => 2,
        }
    }
}

/// Scheduler family as named on the command line; weighted expands to one
/// variant per alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StrategyKind {
    SequentialFifo,
    SequentialUrgency,
    RoundRobin,
    Weighted,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::SequentialFifo,
        StrategyKind::SequentialUrgency,
        StrategyKind::RoundRobin,
        StrategyKind::Weighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SequentialFifo => "sequential-fifo",
            StrategyKind::SequentialUrgency => "sequential-urgency",
            StrategyKind::RoundRobin => "round-robin",
            StrategyKind::Weighted => "weighted",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub manifests: Vec<PathBuf>,
    pub strategies: Vec<StrategyKind>,
    pub alphas: Vec<f64>,
    pub iterations: u32,
    pub base_seed: u64,
    /// The seed field is ignored; each run uses `base_seed + iteration`.
    pub link: LinkParams,
    pub quantum: Quantum,
    pub baseline: Strategy,
    pub static_weights: bool,
    pub aggregate: Aggregate,
    pub output_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn new(manifests: Vec<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            manifests,
            strategies: StrategyKind::ALL.to_vec(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            iterations: DEFAULT_ITERATIONS,
            base_seed: 0,
            link: LinkParams::default(),
            quantum: Quantum::default(),
            baseline: Strategy::SequentialFifo,
            static_weights: false,
            aggregate: Aggregate::Mean,
            output_dir: output_dir.into(),
        }
    }

    /// Concrete strategies in sweep order.
    pub fn variants(&self) -> Result<Vec<Strategy>, SweepError> {
        let mut out = Vec::new();
        let kinds: BTreeSet<StrategyKind> = self.strategies.iter().copied().collect();
        for kind in kinds {
            match kind {
                StrategyKind::SequentialFifo => out.push(Strategy::SequentialFifo),
                StrategyKind::SequentialUrgency => out.push(Strategy::SequentialByUrgency),
                StrategyKind::RoundRobin => out.push(Strategy::RoundRobin),
                StrategyKind::Weighted => {
                    if self.alphas.is_empty() {
                        return Err(SweepError::Config("weighted strategy requested with no alpha values".into()));
                    }
                    for &a in &self.alphas {
                        let alpha = Alpha::new(a).map_err(|e| SweepError::Config(e.to_string()))?;
                        let s = Strategy::WeightedIncremental(alpha);
                        if !out.contains(&s) {
                            out.push(s);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn run_count(&self) -> Result<usize, SweepError> {
        Ok(self.manifests.len() * self.iterations as usize * self.variants()?.len())
    }

    fn validate(&self) -> Result<Vec<Strategy>, SweepError> {
        if self.manifests.is_empty() {
            return Err(SweepError::Config("no manifests given".into()));
        }
        if self.strategies.is_empty() {
            return Err(SweepError::Config("no strategies given".into()));
        }
        if self.iterations == 0 {
            return Err(SweepError::Config("iterations must be at least 1".into()));
        }
        self.link
            .validate()
            .map_err(|e| SweepError::Config(e.to_string()))?;
        let variants = self.variants()?;
        if !variants.contains(&self.baseline) {
            return Err(SweepError::Config(format!(
                "baseline {} is not among the swept strategies",
                self.baseline
            )));
        }
        Ok(variants)
    }
}

/// Result of a successful sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: usize,
    /// Written files, relative to the output directory, sorted.
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Run {
    site: usize,
    strategy: Strategy,
    seed: u64,
    trace_csv: String,
    report: QoeReport,
}

/// Runs every simulation in the plan and writes the artifacts. Nothing is
/// written unless every run succeeds.
pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepOutcome, SweepError> {
    let variants = plan.validate()?;
    let manifests = load_all(&plan.manifests)?;

    let mut sites: Vec<String> = Vec::new();
    for m in &manifests {
        let name = m.site_name().to_owned();
        if sites.contains(&name) {
            return Err(SweepError::Config(format!("two manifests share the site name {name:?}")));
        }
        sites.push(name);
    }

    let mut jobs = Vec::new();
    for site in 0..manifests.len() {
        for it in 0..plan.iterations {
            for &strategy in &variants {
                jobs.push((site, strategy, plan.base_seed.wrapping_add(u64::from(it))));
            }
        }
    }

    let runs: Vec<Run> = jobs
        .into_par_iter()
        .map(|(site, strategy, seed)| {
            let manifest = &manifests[site];
            let config = SimConfig {
                link: plan.link.with_seed(seed),
                strategy,
                quantum: plan.quantum,
                static_weights: plan.static_weights,
            };
            let trace = simulate_with(manifest, &config)
                .map_err(|e| SweepError::Runtime(format!("{} {strategy} seed {seed}: {e}", sites[site])))?;
            let report = derive_report(&trace, manifest)
                .map_err(|e| SweepError::Runtime(format!("{} {strategy} seed {seed}: {e}", sites[site])))?;
            Ok(Run {
                site,
                strategy,
                seed,
                trace_csv: trace.to_csv(),
                report,
            })
        })
        .collect::<Result<_, SweepError>>()?;

    let artifacts = build_artifacts(plan, &sites, &variants, &runs);
    write_artifacts(&plan.output_dir, &artifacts.files)?;
    Ok(SweepOutcome {
        runs: runs.len(),
        files: artifacts.files.keys().cloned().collect(),
        summary: artifacts.summary,
    })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<ResourceManifest>, SweepError> {
    paths
        .iter()
        .map(|p| {
            load_manifest(p).map_err(|source| SweepError::Manifest {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

struct Artifacts {
    files: BTreeMap<PathBuf, String>,
    summary: String,
}

fn build_artifacts(plan: &ExperimentPlan, sites: &[String], variants: &[Strategy], runs: &[Run]) -> Artifacts {
    let mut files = BTreeMap::new();
    let mut report_csv = String::from("site,strategy,alpha,seed,metric,value\n");
    for run in runs {
        let site = &sites[run.site];
        let name = format!("traces/{site}__{}__seed{}.csv", run.strategy.label(), run.seed);
        files.insert(PathBuf::from(name), run.trace_csv.clone());
        let alpha = match run.strategy {
            Strategy::WeightedIncremental(a) => a.to_string(),
            _ => String::new(),
        };
        for metric in Metric::ALL {
            if let Some(v) = run.report.get(metric) {
                let _ = writeln!(
                    report_csv,
                    "{site},{},{alpha},{},{metric},{v}",
                    run.strategy.name(),
                    run.seed
                );
            }
        }
    }
    files.insert(PathBuf::from("report.csv"), report_csv);

    let others: Vec<Strategy> = variants.iter().copied().filter(|s| *s != plan.baseline).collect();
    let labels: Vec<String> = others.iter().map(Strategy::label).collect();
    // (metric, variant) -> per-site improvements
    let mut pooled: BTreeMap<(Metric, String), Vec<f64>> = BTreeMap::new();
    let mut summary = String::new();

    for (site_idx, site) in sites.iter().enumerate() {
        let mean_of = |s: Strategy| {
            let reports: Vec<QoeReport> = runs
                .iter()
                .filter(|r| r.site == site_idx && r.strategy == s)
                .map(|r| r.report.clone())
                .collect();
            report_from(&mean_report(&reports))
        };
        let baseline = mean_of(plan.baseline);
        let variant_reports: Vec<(String, QoeReport)> =
            others.iter().map(|&s| (s.label(), mean_of(s))).collect();
        let table = improvement_table(&baseline, &variant_reports);
        for cell in &table.cells {
            pooled
                .entry((cell.metric, cell.variant.clone()))
                .or_default()
                .push(cell.improvement_pct);
        }
        let cells: BTreeMap<(Metric, String), f64> = table
            .cells
            .iter()
            .map(|c| ((c.metric, c.variant.clone()), c.improvement_pct))
            .collect();
        files.insert(
            PathBuf::from(format!("improvement_{site}.csv")),
            matrix_csv(&labels, &cells),
        );
        let _ = writeln!(summary, "{site}: improvement % vs {} (mean of {} seeds)", plan.baseline, plan.iterations);
        summary.push_str(&matrix_text(&labels, &cells));
        summary.push('\n');
    }

    let aggregated: BTreeMap<(Metric, String), f64> = pooled
        .into_iter()
        .filter_map(|(k, v)| plan.aggregate.apply(&v).map(|a| (k, a)))
        .collect();
    let aggregate_name = match plan.aggregate {
        Aggregate::Mean => "mean",
        Aggregate::Median => "median",
    };
    files.insert(
        PathBuf::from(format!("improvement_all_{aggregate_name}.csv")),
        matrix_csv(&labels, &aggregated),
    );
    let _ = writeln!(summary, "all sites: {aggregate_name} improvement % vs {}", plan.baseline);
    summary.push_str(&matrix_text(&labels, &aggregated));

    Artifacts { files, summary }
}

/// Rebuilds a report from per-metric means. Absent proxy metrics stay
/// absent.
fn report_from(means: &BTreeMap<Metric, f64>) -> QoeReport {
    let get = |m| means.get(&m).copied();
    QoeReport {
        proxy_fcp_ms: get(Metric::ProxyFcp),
        proxy_lcp_ms: get(Metric::ProxyLcp),
        proxy_tti_ms: get(Metric::ProxyTti),
        page_complete_ms: get(Metric::PageComplete).unwrap_or(0.0),
        mean_completion_ms: get(Metric::MeanCompletion).unwrap_or(0.0),
        median_completion_ms: get(Metric::MedianCompletion).unwrap_or(0.0),
    }
}

fn matrix_csv(labels: &[String], cells: &BTreeMap<(Metric, String), f64>) -> String {
    let mut out = String::from("metric");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for metric in Metric::ALL {
        out.push_str(metric.name());
        for l in labels {
            out.push(',');
            if let Some(v) = cells.get(&(metric, l.clone())) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

fn matrix_text(labels: &[String], cells: &BTreeMap<(Metric, String), f64>) -> String {
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(8);
    let mut out = format!("{:<22}", "metric");
    for l in labels {
        let _ = write!(out, " {l:>width$}");
    }
    out.push('\n');
    for metric in Metric::ALL {
        let _ = write!(out, "{:<22}", metric.name());
        for l in labels {
            match cells.get(&(metric, l.clone())) {
                Some(v) => {
                    let _ = write!(out, " {v:>width$.2}");
                }
                None => {
                    let _ = write!(out, " {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn write_artifacts(dir: &Path, files: &BTreeMap<PathBuf, String>) -> Result<(), SweepError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SweepError::Io { path, source }
    };
    fs::create_dir_all(dir.join("traces")).map_err(io(dir))?;
    for (rel, body) in files {
        let path = dir.join(rel);
        fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(())
}

/// Resource count, bytes, urgency histogram and role flag inventory.
pub fn describe_manifest(manifest: &ResourceManifest) -> String {
    let n = manifest.len();
    let histogram: Vec<String> = manifest
        .urgency_histogram()
        .iter()
        .map(|(u, c)| format!("{}:{c}", u.level()))
        .collect();
    let flags: Vec<String> = manifest
        .flag_counts()
        .iter()
        .map(|(f, c)| format!("{}:{c}", f.as_str()))
        .collect();
    format!(
        "{}: {n} resource{}, {} bytes, urgency histogram {{{}}}, flags {{{}}}, depth {}",
        manifest.site_name(),
        if n == 1 { "" } else { "s" },
        manifest.total_bytes(),
        histogram.join(", "),
        flags.join(", "),
        manifest.depth()
    )
}

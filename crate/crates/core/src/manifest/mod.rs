//! Page resource manifests.
//!
//! A manifest is the simulator's model of a downloaded page: an ordered list
//! of resources (order is request order) with sizes, priorities, the
//! resource whose arrival lets the client discover each one, and role flags
//! used by the proxy QoE metrics.
//!
//! On disk a manifest is JSON:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "site_name": "example",
//!   "resources": [
//!     { "id": "index.html", "size_bytes": 14000, "chromium_priority": 0,
//!       "role_flags": ["render_critical"] },
//!     { "id": "hero.jpg", "size_bytes": 180000, "urgency": 1,
//!       "discovered_after": "index.html", "role_flags": ["lcp_candidate"] }
//!   ]
//! }
//! ```
//!
//! `chromium_priority` is a tier `0..=4`, `urgency` an explicit level
//! `0..=7` that overrides it; with neither the urgency is 3. `incremental`
//! defaults to true. `role_flags` draws from `render_critical`,
//! `lcp_candidate` (at most one per manifest) and `script`.

mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::priority::{map_chromium_priority, ChromiumPriority, PriorityParams, Urgency};

pub use synth::{generate_synthetic, ProfileError, SyntheticProfile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("discovery cycle through resource {0:?}")]
    Cycle(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ManifestError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ManifestError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleFlag {
    RenderCritical,
    LcpCandidate,
    Script,
}

impl RoleFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleFlag::RenderCritical => "render_critical",
            RoleFlag::LcpCandidate => "lcp_candidate",
            RoleFlag::Script => "script",
        }
    }
}

fn default_incremental() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resource {
    pub id: String,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chromium_priority: Option<ChromiumPriority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urgency: Option<Urgency>,
    #[serde(default = "default_incremental")]
    pub incremental: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discovered_after: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub role_flags: BTreeSet<RoleFlag>,
}

impl Resource {
    pub fn new(id: impl Into<String>, size_bytes: u64) -> Self {
        Resource {
            id: id.into(),
            size_bytes,
            chromium_priority: None,
            urgency: None,
            incremental: true,
            discovered_after: None,
            role_flags: BTreeSet::new(),
        }
    }

    pub fn with_urgency(mut self, u: Urgency) -> Self {
        self.urgency = Some(u);
        self
    }

    pub fn with_chromium_priority(mut self, p: ChromiumPriority) -> Self {
        self.chromium_priority = Some(p);
        self
    }

    pub fn discovered_after(mut self, trigger: impl Into<String>) -> Self {
        self.discovered_after = Some(trigger.into());
        self
    }

    pub fn with_flag(mut self, flag: RoleFlag) -> Self {
        self.role_flags.insert(flag);
        self
    }

    /// Explicit urgency, else the mapped Chromium tier, else the default.
    pub fn resolved_urgency(&self) -> Urgency {
        self.urgency
            .or_else(|| self.chromium_priority.map(map_chromium_priority))
            .unwrap_or_default()
    }

    pub fn priority(&self) -> PriorityParams {
        PriorityParams::new(self.resolved_urgency(), self.incremental)
    }

    pub fn has_flag(&self, flag: RoleFlag) -> bool {
        self.role_flags.contains(&flag)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    schema_version: u32,
    site_name: String,
    resources: Vec<Resource>,
}

/// A validated manifest. Resource order is request (arrival) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceManifest {
    site_name: String,
    resources: Vec<Resource>,
    triggers: Vec<Option<usize>>,
}

impl ResourceManifest {
    pub fn new(site_name: impl Into<String>, resources: Vec<Resource>) -> Result<Self, ManifestError> {
        let triggers = validate(&resources)?;
        Ok(ResourceManifest {
            site_name: site_name.into(),
            resources,
            triggers,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ManifestFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ManifestError::schema(path, e.into_inner().to_string())
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::schema(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", file.schema_version),
            ));
        }
        Self::new(file.site_name, file.resources)
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile {
            schema_version: SCHEMA_VERSION,
            site_name: self.site_name.clone(),
            resources: self.resources.clone(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("manifest serializes");
        out.push('\n');
        out
    }

    pub fn site_name(&self) -> &str {
        &self.site_name
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    /// Index of the resource that triggers discovery of resource `i`.
    pub fn trigger(&self, i: usize) -> Option<usize> {
        self.triggers[i]
    }

    /// Resources with no trigger, in manifest order.
    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.triggers
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_none())
            .map(|(i, _)| i)
    }

    /// For each resource, the resources it triggers, in manifest order.
    pub fn dependents(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.resources.len()];
        for (i, t) in self.triggers.iter().enumerate() {
            if let Some(t) = t {
                out[*t].push(i);
            }
        }
        out
    }

    /// Number of levels in the discovery forest (1 when every resource is a root).
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.resources.len()];
        for i in self.topological_order() {
            if let Some(t) = self.triggers[i] {
                level[i] = level[t] + 1;
            }
        }
        level.into_iter().max().map_or(0, |d| d + 1)
    }

    fn topological_order(&self) -> Vec<usize> {
        let deps = self.dependents();
        let mut order: Vec<usize> = self.roots().collect();
        let mut next = 0;
        while next < order.len() {
            order.extend(deps[order[next]].iter().copied());
            next += 1;
        }
        order
    }

    pub fn total_bytes(&self) -> u64 {
        self.resources.iter().map(|r| r.size_bytes).sum()
    }

    pub fn urgency_histogram(&self) -> BTreeMap<Urgency, usize> {
        let mut hist = BTreeMap::new();
        for r in &self.resources {
            *hist.entry(r.resolved_urgency()).or_insert(0) += 1;
        }
        hist
    }

    pub fn flag_counts(&self) -> BTreeMap<RoleFlag, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.resources {
            for f in &r.role_flags {
                *counts.entry(*f).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Re-runs validation; useful for manifests assembled by other code paths.
    pub fn check(&self) -> Result<(), ManifestError> {
        validate(&self.resources).map(|_| ())
    }

    /// `id,size_bytes,urgency,incremental,flags` with flags joined by `|`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("id,size_bytes,urgency,incremental,flags\n");
        for r in &self.resources {
            let flags: Vec<&str> = r.role_flags.iter().map(|f| f.as_str()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.id),
                r.size_bytes,
                r.resolved_urgency(),
                r.incremental,
                flags.join("|")
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ResourceManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ResourceManifest::from_json(&text)
}

pub fn save_manifest(manifest: &ResourceManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Checks every manifest invariant and resolves trigger ids to indices.
fn validate(resources: &[Resource]) -> Result<Vec<Option<usize>>, ManifestError> {
    if resources.is_empty() {
        return Err(ManifestError::schema("resources", "must not be empty"));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, r) in resources.iter().enumerate() {
        if r.id.is_empty() {
            return Err(ManifestError::schema(format!("resources[{i}].id"), "must not be empty"));
        }
        if r.size_bytes == 0 {
            return Err(ManifestError::schema(
                format!("resources[{i}].size_bytes"),
                "must be positive",
            ));
        }
        if let Some(first) = index.insert(&r.id, i) {
            return Err(ManifestError::schema(
                format!("resources[{i}].id"),
                format!("duplicate id {:?} (first at resources[{first}])", r.id),
            ));
        }
    }

    let mut triggers = Vec::with_capacity(resources.len());
    for (i, r) in resources.iter().enumerate() {
        let t = match &r.discovered_after {
            None => None,
            Some(id) => Some(*index.get(id.as_str()).ok_or_else(|| {
                ManifestError::schema(
                    format!("resources[{i}].discovered_after"),
                    format!("unknown id {id:?}"),
                )
            })?),
        };
        triggers.push(t);
    }

    // Each resource has at most one trigger, so following trigger links
    // from any node either reaches a root or loops.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks = vec![Mark::New; resources.len()];
    for start in 0..resources.len() {
        let mut path = Vec::new();
        let mut node = Some(start);
        while let Some(i) = node {
            match marks[i] {
                Mark::Done => break,
                Mark::Active => return Err(ManifestError::Cycle(resources[i].id.clone())),
                Mark::New => {
                    marks[i] = Mark::Active;
                    path.push(i);
                    node = triggers[i];
                }
            }
        }
        for i in path {
            marks[i] = Mark::Done;
        }
    }

    if triggers[0].is_some() {
        return Err(ManifestError::schema(
            "resources[0].discovered_after",
            "the first resource must be a root",
        ));
    }

    let mut lcp = None;
    for (i, r) in resources.iter().enumerate() {
        if r.has_flag(RoleFlag::LcpCandidate) {
            if let Some(first) = lcp {
                return Err(ManifestError::schema(
                    format!("resources[{i}].role_flags"),
                    format!("second lcp_candidate (first at resources[{first}])"),
                ));
            }
            lcp = Some(i);
        }
    }
    Ok(triggers)
}

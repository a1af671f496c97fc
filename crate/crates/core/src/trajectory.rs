//! Trajectory data model, JSON Lines I/O, history rendering and action
//! statistics.
//!
//! One trajectory per line, tagged `"schema": "venus/1"`. Metadata fields
//! come first, then `steps` in ascending order; serialization is
//! deterministic so a load/write cycle is byte-stable.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, Action, ActionKind};
use crate::geometry::ScreenSize;

pub const SCHEMA: &str = "venus/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Other,
}

/// Pipeline status, ordered by pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Raw,
    Filtered,
    Reconstructed,
    Aligned,
    Accepted,
    Rejected,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Raw => "raw",
            Status::Filtered => "filtered",
            Status::Reconstructed => "reconstructed",
            Status::Aligned => "aligned",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
        }
    }

    /// Moves forward to `next`, never backwards.
    pub fn advance(self, next: Status) -> Status {
        self.max(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// 1-based position in the trajectory.
    pub index: u32,
    pub screenshot_ref: String,
    pub screen: ScreenSize,
    pub thought: String,
    /// Normalized action used for training and rewards.
    pub action: Action,
    /// Action text as it appeared in the source data.
    pub raw_action: String,
}

/// Where an augmented sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub source_trace_id: String,
    pub step: u32,
    pub variant: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub schema: String,
    pub trace_id: String,
    pub task: String,
    pub language: Language,
    pub source: String,
    pub category: String,
    pub status: Status,
    /// Set by sources that label question-answering episodes explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_retrieval: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fixed_by_annotator: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_action(&self) -> Option<&Action> {
        self.steps.last().map(|s| &s.action)
    }

    /// Rewrites step indices as `1..=N`.
    pub fn renumber(&mut self) {
        for (i, step) in self.steps.iter_mut().enumerate() {
            step.index = i as u32 + 1;
        }
    }

    /// Structural checks applied on load.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.schema != SCHEMA {
            return Err(RecordError::Schema(format!(
                "unsupported schema `{}`, expected `{SCHEMA}`",
                self.schema
            )));
        }
        if self.trace_id.trim().is_empty() {
            return Err(RecordError::Schema("`trace_id` is empty".into()));
        }
        if self.steps.is_empty() {
            return Err(RecordError::Schema("trajectory has no steps".into()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let expected = i as u32 + 1;
            if step.index != expected {
                return Err(RecordError::Step {
                    step: step.index,
                    message: format!("index {} out of sequence, expected {expected}", step.index),
                });
            }
            if let Err(e) = parse_action(&step.raw_action) {
                return Err(RecordError::Step {
                    step: step.index,
                    message: format!("raw_action: {e}"),
                });
            }
            if let Err(e) = step.action.validate_on(step.screen) {
                return Err(RecordError::Step {
                    step: step.index,
                    message: e.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Canonical single-line JSON.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("step {step}: {message}")]
    Step { step: u32, message: String },
    #[error("duplicate trace_id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    /// 1-based line number in the source file.
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    pub message: String,
}

/// Rejected records and non-fatal warnings collected while loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub accepted: usize,
    pub rejected: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDataset {
    pub trajectories: Vec<Trajectory>,
    pub report: ValidationReport,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn trace_id_hint(value: &serde_json::Value) -> Option<String> {
    value.get("trace_id")?.as_str().map(str::to_string)
}

/// Parses JSON Lines text. Blank lines are skipped; every other line either
/// yields a trajectory or an entry in `report.rejected`.
pub fn parse_dataset(text: &str) -> LoadedDataset {
    let mut out = LoadedDataset::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        out.report.records += 1;
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                out.report.rejected.push(Issue {
                    line: line_no,
                    trace_id: None,
                    message: RecordError::Json(e.to_string()).to_string(),
                });
                continue;
            }
        };
        let hint = trace_id_hint(&value);
        let result = serde_json::from_value::<Trajectory>(value)
            .map_err(|e| RecordError::Schema(e.to_string()))
            .and_then(|t| t.validate().map(|_| t))
            .and_then(|t| {
                if seen.insert(t.trace_id.clone()) {
                    Ok(t)
                } else {
                    Err(RecordError::DuplicateId(t.trace_id))
                }
            });
        match result {
            Ok(t) => out.trajectories.push(t),
            Err(e) => out.report.rejected.push(Issue {
                line: line_no,
                trace_id: hint,
                message: e.to_string(),
            }),
        }
    }
    out.report.accepted = out.trajectories.len();
    out
}

fn is_remote(reference: &str) -> bool {
    reference.contains("://")
}

/// Resolves a screenshot reference against the dataset directory.
pub fn resolve_screenshot(base: &Path, reference: &str) -> Option<PathBuf> {
    if is_remote(reference) {
        return None;
    }
    let p = Path::new(reference);
    Some(if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    })
}

/// Loads a dataset file. Missing local screenshots are reported as
/// warnings; pixels are never read here.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut loaded = parse_dataset(&text);
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for t in &loaded.trajectories {
        for step in &t.steps {
            if let Some(file) = resolve_screenshot(base, &step.screenshot_ref) {
                if !file.exists() {
                    loaded.report.warnings.push(Issue {
                        line: 0,
                        trace_id: Some(t.trace_id.clone()),
                        message: format!(
                            "step {}: screenshot `{}` not found",
                            step.index, step.screenshot_ref
                        ),
                    });
                }
            }
        }
    }
    Ok(loaded)
}

/// Canonical JSON Lines for a slice of trajectories.
pub fn dataset_to_string(ts: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in ts {
        out.push_str(&t.to_json_line());
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, ts: &[Trajectory]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for t in ts {
        w.write_all(t.to_json_line().as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

// ---------------------------------------------------------------------------
// History

/// Thought/action pairs of the steps before the current one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryContext {
    pub pairs: Vec<(String, Action)>,
}

impl HistoryContext {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("step {index} out of range for trajectory with {len} steps")]
pub struct IndexOutOfRange {
    pub index: usize,
    pub len: usize,
}

/// History for step `n` (1-based): the pairs of steps `1..n`.
pub fn history_context(t: &Trajectory, n: usize) -> Result<HistoryContext, IndexOutOfRange> {
    if n == 0 || n > t.steps.len() {
        return Err(IndexOutOfRange {
            index: n,
            len: t.steps.len(),
        });
    }
    Ok(HistoryContext {
        pairs: t.steps[..n - 1]
            .iter()
            .map(|s| (s.thought.clone(), s.action.clone()))
            .collect(),
    })
}

/// Fills the `{history}` slot of the navigation prompt.
pub fn render_history(h: &HistoryContext) -> String {
    if h.is_empty() {
        return "None".to_string();
    }
    let mut out = String::new();
    for (i, (thought, action)) in h.pairs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "Step {}: {} → {}", i + 1, thought.trim(), action);
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics

/// Step counts per action kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStats {
    pub counts: BTreeMap<ActionKind, u64>,
}

impl Default for ActionStats {
    fn default() -> Self {
        Self {
            counts: ActionKind::ALL.iter().map(|&k| (k, 0)).collect(),
        }
    }
}

impl ActionStats {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn count(&self, kind: ActionKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn add(&mut self, kind: ActionKind) {
        *self.counts.entry(kind).or_insert(0) += 1;
    }

    /// Frequency of `kind`; zero when there are no steps.
    pub fn frequency(&self, kind: ActionKind) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.count(kind) as f64 / total as f64
        }
    }

    pub fn frequencies(&self) -> BTreeMap<ActionKind, f64> {
        self.counts.keys().map(|&k| (k, self.frequency(k))).collect()
    }

    pub fn merge(&mut self, other: &ActionStats) {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
    }
}

pub fn action_distribution<'a>(ts: impl IntoIterator<Item = &'a Trajectory>) -> ActionStats {
    let mut stats = ActionStats::default();
    for t in ts {
        for s in &t.steps {
            stats.add(s.action.kind());
        }
    }
    stats
}

// ---------------------------------------------------------------------------
// Manifest

/// One dataset shard listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    pub source: String,
    pub count: usize,
    pub status_tallies: BTreeMap<Status, usize>,
    /// Source labels scroll directions by content motion rather than
    /// finger motion.
    #[serde(default)]
    pub content_motion: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub shards: Vec<ShardEntry>,
}

impl Manifest {
    pub fn new() -> Self {
        Self {
            schema: SCHEMA.to_string(),
            shards: Vec::new(),
        }
    }

    pub fn add_shard(&mut self, path: impl Into<String>, source: impl Into<String>, ts: &[Trajectory], content_motion: bool) {
        let mut status_tallies = BTreeMap::new();
        for t in ts {
            *status_tallies.entry(t.status).or_insert(0) += 1;
        }
        self.shards.push(ShardEntry {
            path: path.into(),
            source: source.into(),
            count: ts.len(),
            status_tallies,
            content_motion,
        });
    }

    /// Sources flagged `content_motion`.
    pub fn content_motion_sources(&self) -> std::collections::BTreeSet<String> {
        self.shards
            .iter()
            .filter(|s| s.content_motion)
            .map(|s| s.source.clone())
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }
}

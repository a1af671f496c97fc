//! Review decisions over a queue of traces awaiting annotation.
//!
//! Decisions are appended to `decisions.jsonl` in the store directory and
//! never rewritten. The status index is a fold over that log: the latest
//! decision for a trace wins.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use venus_core::action::{parse_action, Action, ParseError};
use venus_core::trajectory::{dataset_to_string, load_dataset, Issue, Status, Trajectory};

pub const LOG_FILE: &str = "decisions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    Fix,
}

/// Review state of one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Fixed,
}

impl ReviewStatus {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    fn of(v: Verdict) -> Self {
        match v {
            Verdict::Accept => ReviewStatus::Accepted,
            Verdict::Reject => ReviewStatus::Rejected,
            Verdict::Fix => ReviewStatus::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepFix {
    /// 1-based step index.
    pub step: u32,
    /// Corrected action text.
    pub action: String,
}

/// What a client posts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionInput {
    pub verdict: Verdict,
    #[serde(default)]
    pub fixes: Vec<StepFix>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
}

/// A logged decision. `timestamp` is stamped by the store in milliseconds
/// since the Unix epoch and strictly increases across the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewDecision {
    pub trace_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub fixes: Vec<StepFix>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
    pub timestamp: u64,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown trace `{0}`")]
    UnknownTrace(String),
    #[error("step {step}: {source}")]
    InvalidFix {
        step: u32,
        #[source]
        source: ParseError,
    },
    #[error("{0}")]
    InvalidDecision(String),
    #[error("review dataset has invalid records")]
    Dataset(Vec<Issue>),
    #[error("decision log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Current state of one trace in the queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub status: ReviewStatus,
    pub decision: Option<ReviewDecision>,
}

pub type StatusIndex = BTreeMap<String, Entry>;

/// Status index from a trace list and a decision sequence. Decisions for
/// unknown traces are ignored.
pub fn replay<'a>(ids: impl IntoIterator<Item = &'a str>, log: impl IntoIterator<Item = &'a ReviewDecision>) -> StatusIndex {
    let mut index: StatusIndex = ids
        .into_iter()
        .map(|id| {
            (
                id.to_string(),
                Entry {
                    status: ReviewStatus::Pending,
                    decision: None,
                },
            )
        })
        .collect();
    for d in log {
        if let Some(e) = index.get_mut(&d.trace_id) {
            e.status = ReviewStatus::of(d.verdict);
            e.decision = Some(d.clone());
        }
    }
    index
}

/// Parses corrected actions, keyed by step.
fn parsed_fixes(t: &Trajectory, fixes: &[StepFix]) -> Result<BTreeMap<u32, (Action, String)>, ReviewError> {
    let mut out = BTreeMap::new();
    for f in fixes {
        let Some(step) = t.steps.iter().find(|s| s.index == f.step) else {
            return Err(ReviewError::InvalidDecision(format!(
                "step {} out of range 1..={}",
                f.step,
                t.len()
            )));
        };
        let action = parse_action(&f.action).map_err(|source| ReviewError::InvalidFix { step: f.step, source })?;
        action
            .validate_on(step.screen)
            .map_err(|source| ReviewError::InvalidFix { step: f.step, source })?;
        if out.insert(f.step, (action, f.action.clone())).is_some() {
            return Err(ReviewError::InvalidDecision(format!("step {} fixed twice", f.step)));
        }
    }
    Ok(out)
}

fn check_decision(t: &Trajectory, input: &DecisionInput) -> Result<(), ReviewError> {
    match (input.verdict, input.fixes.is_empty()) {
        (Verdict::Fix, true) => Err(ReviewError::InvalidDecision("verdict `fix` needs at least one fix".into())),
        (Verdict::Accept | Verdict::Reject, false) => Err(ReviewError::InvalidDecision(
            "fixes are only allowed with verdict `fix`".into(),
        )),
        _ => parsed_fixes(t, &input.fixes).map(|_| ()),
    }
}

/// The trace as it would be exported under `decision`: accepted traces
/// unchanged, fixed traces with corrected actions and truncated after the
/// last fixed step. `None` for rejections.
pub fn apply_decision(t: &Trajectory, decision: &ReviewDecision) -> Option<Trajectory> {
    let mut out = t.clone();
    match decision.verdict {
        Verdict::Reject => return None,
        Verdict::Accept => {}
        Verdict::Fix => {
            let fixes = parsed_fixes(t, &decision.fixes).ok()?;
            let last = *fixes.keys().next_back()?;
            out.steps.retain(|s| s.index <= last);
            for s in &mut out.steps {
                if let Some((action, raw)) = fixes.get(&s.index) {
                    s.action = action.clone();
                    s.raw_action = raw.clone();
                }
            }
            out.fixed_by_annotator = true;
        }
    }
    out.status = Status::Accepted;
    Some(out)
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Append-only decision store over a fixed queue of traces.
#[derive(Debug)]
pub struct ReviewStore {
    traces: Vec<Trajectory>,
    positions: BTreeMap<String, usize>,
    log_path: PathBuf,
    log: File,
    decisions: Vec<ReviewDecision>,
    index: StatusIndex,
    last_timestamp: u64,
}

impl ReviewStore {
    /// Opens the store in `dir` (created if missing) over `traces`, replaying
    /// any existing log. A torn final line from an interrupted write is
    /// ignored and trimmed away.
    pub fn open(dir: impl AsRef<Path>, traces: Vec<Trajectory>) -> Result<Self, ReviewError> {
        let dir = dir.as_ref();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReviewError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join(LOG_FILE);
        let text = match fs::read_to_string(&log_path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        let mut decisions = Vec::new();
        let mut valid_len = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            let complete = line.ends_with('\n');
            if line.trim().is_empty() {
                valid_len += line.len();
                continue;
            }
            if !complete {
                // only the final line can lack its newline
                tracing::warn!(line = i + 1, "ignoring torn final decision log line");
                break;
            }
            let d = serde_json::from_str::<ReviewDecision>(line).map_err(|e| ReviewError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            decisions.push(d);
            valid_len += line.len();
        }
        if valid_len < text.len() {
            let f = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
            f.set_len(valid_len as u64).map_err(io_err(&log_path))?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let positions = traces
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trace_id.clone(), i))
            .collect();
        let index = replay(traces.iter().map(|t| t.trace_id.as_str()), &decisions);
        let last_timestamp = decisions.iter().map(|d| d.timestamp).max().unwrap_or(0);
        Ok(Self {
            traces,
            positions,
            log_path,
            log,
            decisions,
            index,
            last_timestamp,
        })
    }

    /// Loads the queue from a dataset file and opens the store.
    pub fn open_with_dataset(dir: impl AsRef<Path>, dataset: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let dataset = dataset.as_ref();
        let loaded = load_dataset(dataset).map_err(|e| match e {
            venus_core::trajectory::DatasetError::Io { path, source } => ReviewError::Io { path, source },
        })?;
        if !loaded.report.rejected.is_empty() {
            return Err(ReviewError::Dataset(loaded.report.rejected));
        }
        Self::open(dir, loaded.trajectories)
    }

    pub fn traces(&self) -> &[Trajectory] {
        &self.traces
    }

    pub fn trace(&self, id: &str) -> Option<&Trajectory> {
        self.positions.get(id).map(|&i| &self.traces[i])
    }

    pub fn index(&self) -> &StatusIndex {
        &self.index
    }

    pub fn entry(&self, id: &str) -> Option<&Entry> {
        self.index.get(id)
    }

    pub fn decisions(&self) -> &[ReviewDecision] {
        &self.decisions
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Traces in queue order, optionally filtered by status.
    pub fn list(&self, status: Option<ReviewStatus>) -> Vec<(&Trajectory, &Entry)> {
        self.traces
            .iter()
            .map(|t| (t, &self.index[&t.trace_id]))
            .filter(|(_, e)| status.is_none_or(|s| e.status == s))
            .collect()
    }

    /// Validates, stamps, appends and applies a decision.
    pub fn record(&mut self, trace_id: &str, input: DecisionInput) -> Result<ReviewDecision, ReviewError> {
        let t = self
            .trace(trace_id)
            .ok_or_else(|| ReviewError::UnknownTrace(trace_id.to_string()))?;
        check_decision(t, &input)?;
        let timestamp = now_millis().max(self.last_timestamp + 1);
        let d = ReviewDecision {
            trace_id: trace_id.to_string(),
            verdict: input.verdict,
            fixes: input.fixes,
            note: input.note,
            reviewer: input.reviewer,
            timestamp,
        };
        let mut line = serde_json::to_string(&d).expect("decision serializes");
        line.push('\n');
        let io_err = |source| ReviewError::Io {
            path: self.log_path.clone(),
            source,
        };
        self.log.write_all(line.as_bytes()).map_err(io_err)?;
        self.log.sync_data().map_err(io_err)?;
        self.last_timestamp = timestamp;
        self.index.insert(
            d.trace_id.clone(),
            Entry {
                status: ReviewStatus::of(d.verdict),
                decision: Some(d.clone()),
            },
        );
        self.decisions.push(d.clone());
        Ok(d)
    }

    /// Accepted and fixed traces in queue order, ready for training.
    pub fn export(&self) -> Vec<Trajectory> {
        self.traces
            .iter()
            .filter_map(|t| {
                let d = self.index[&t.trace_id].decision.as_ref()?;
                apply_decision(t, d)
            })
            .collect()
    }

    pub fn export_string(&self) -> String {
        dataset_to_string(&self.export())
    }

    pub fn export_to(&self, path: impl AsRef<Path>) -> Result<usize, ReviewError> {
        let path = path.as_ref();
        let ts = self.export();
        fs::write(path, dataset_to_string(&ts)).map_err(|source| ReviewError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ts.len())
    }

    /// Count of traces per status.
    pub fn tallies(&self) -> BTreeMap<ReviewStatus, usize> {
        let mut out = BTreeMap::new();
        for e in self.index.values() {
            *out.entry(e.status).or_insert(0) += 1;
        }
        out
    }

    /// Ids present in the log but not in the queue.
    pub fn orphaned_decisions(&self) -> BTreeSet<&str> {
        self.decisions
            .iter()
            .map(|d| d.trace_id.as_str())
            .filter(|id| !self.positions.contains_key(*id))
            .collect()
    }
}

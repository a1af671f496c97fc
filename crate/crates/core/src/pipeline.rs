//! Training-data pipeline: filtering of collected traces, category
//! resampling, answer reconstruction for information-retrieval tasks and
//! quality control of generated traces.
//!
//! Every stage returns a [`FilterReport`] whose partitions add up to the
//! stage input. Stages preserve input order and are deterministic for a
//! fixed seed and deterministic oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{actions_match, Action, ActionKind};
use crate::oracle::{stable_hash, OracleError, OrmOracle, SummarizerOracle};
use crate::trajectory::{Status, Step, Trajectory};

pub const RULE_SHORT: &str = "short";
pub const RULE_INCONSISTENT: &str = "inconsistent";
pub const RULE_OVER_CAP: &str = "over_cap";
pub const RULE_ABNORMAL_EXIT: &str = "abnormal_exit";
pub const RULE_REPEATED_ACTION: &str = "repeated_action";
pub const RULE_LOW_ORM: &str = "low_orm";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("trace {trace_id}: {source}")]
    Oracle {
        trace_id: String,
        #[source]
        source: OracleError,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

/// Accounting for one stage: `kept + sum(drops) == input`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub stage: String,
    pub input: usize,
    pub kept: usize,
    pub drops: BTreeMap<String, usize>,
    /// Informational tallies over kept traces (e.g. how many were rewritten).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tallies: BTreeMap<String, usize>,
    /// Weight per category that would equalize category frequencies among
    /// kept traces: `kept / (n_categories * count_c)`.
    pub category_weights: BTreeMap<String, f64>,
}

impl FilterReport {
    fn new(stage: &str, input: usize) -> Self {
        Self {
            stage: stage.to_string(),
            input,
            ..Self::default()
        }
    }

    fn drop(&mut self, rule: &str) {
        *self.drops.entry(rule.to_string()).or_insert(0) += 1;
    }

    fn tally(&mut self, key: &str) {
        *self.tallies.entry(key.to_string()).or_insert(0) += 1;
    }

    fn finish(mut self, kept: &[Trajectory]) -> Self {
        self.kept = kept.len();
        self.category_weights = category_weights(kept);
        self
    }

    pub fn dropped(&self) -> usize {
        self.drops.values().sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.kept + self.dropped() == self.input
    }
}

pub fn category_weights(ts: &[Trajectory]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in ts {
        *counts.entry(t.category.clone()).or_insert(0) += 1;
    }
    let n_cat = counts.len() as f64;
    let total = ts.len() as f64;
    counts
        .into_iter()
        .map(|(c, n)| (c, total / (n_cat * n as f64)))
        .collect()
}

/// Maps `f` over `items` on at most `max_in_flight` threads, keeping order.
pub(crate) fn bounded_map<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let threads = max_in_flight.max(1);
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

// ---------------------------------------------------------------------------
// Filtering

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_len: usize,
    pub consistency_threshold: f64,
    /// Sources whose scroll directions describe content motion; their
    /// directions are inverted to the finger-swipe convention.
    pub content_motion_sources: BTreeSet<String>,
    pub max_in_flight: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_len: 2,
            consistency_threshold: 0.5,
            content_motion_sources: BTreeSet::new(),
            max_in_flight: 8,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.min_len < 1 {
            return Err(PipelineError::Config("min_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.consistency_threshold) {
            return Err(PipelineError::Config(
                "consistency_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

enum Verdict {
    Keep(Trajectory, Option<&'static str>),
    Drop(&'static str),
}

/// Inverts every scroll direction. Returns whether anything changed.
pub fn invert_scroll_directions(t: &mut Trajectory) -> bool {
    let mut changed = false;
    for step in &mut t.steps {
        if let Action::Scroll { direction, .. } = &mut step.action {
            *direction = direction.inverse();
            changed = true;
        }
    }
    changed
}

fn filter_one(
    t: &Trajectory,
    summarizer: &dyn SummarizerOracle,
    cfg: &FilterConfig,
) -> Result<Verdict, OracleError> {
    if t.len() < cfg.min_len {
        return Ok(Verdict::Drop(RULE_SHORT));
    }
    let mut out = t.clone();
    let mut note = None;
    // Only raw traces are normalized and scored; a trace that already
    // passed this stage is left untouched.
    if t.status == Status::Raw {
        if cfg.content_motion_sources.contains(&t.source) && invert_scroll_directions(&mut out) {
            note = Some("scroll_rewritten");
        }
        let summaries = out
            .steps
            .iter()
            .map(|s| summarizer.summarize(&out.task, s))
            .collect::<Result<Vec<_>, _>>()?;
        let score = summarizer.compare(&summaries.join("\n"), &out.task)?;
        if score < cfg.consistency_threshold {
            return Ok(Verdict::Drop(RULE_INCONSISTENT));
        }
    }
    out.status = out.status.advance(Status::Filtered);
    Ok(Verdict::Keep(out, note))
}

pub fn filter_traces(
    ts: &[Trajectory],
    summarizer: &dyn SummarizerOracle,
    cfg: &FilterConfig,
) -> Result<(Vec<Trajectory>, FilterReport), PipelineError> {
    cfg.validate()?;
    let verdicts = bounded_map(ts, cfg.max_in_flight, |t| filter_one(t, summarizer, cfg));
    let mut report = FilterReport::new("filter", ts.len());
    let mut kept = Vec::new();
    for (t, v) in ts.iter().zip(verdicts) {
        match v.map_err(|source| PipelineError::Oracle {
            trace_id: t.trace_id.clone(),
            source,
        })? {
            Verdict::Keep(t, note) => {
                if let Some(n) = note {
                    report.tally(n);
                }
                kept.push(t);
            }
            Verdict::Drop(rule) => report.drop(rule),
        }
    }
    let report = report.finish(&kept);
    Ok((kept, report))
}

// ---------------------------------------------------------------------------
// Resampling

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Cap applied to categories without an explicit entry in `caps`.
    pub default_cap: Option<usize>,
    pub caps: BTreeMap<String, usize>,
    pub seed: u64,
}

/// Caps each category by seeded sampling without replacement. Survivors keep
/// their input order.
pub fn resample_by_category(ts: &[Trajectory], cfg: &ResampleConfig) -> (Vec<Trajectory>, FilterReport) {
    let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in ts.iter().enumerate() {
        by_cat.entry(t.category.as_str()).or_default().push(i);
    }
    let mut keep = vec![true; ts.len()];
    let mut report = FilterReport::new("resample", ts.len());
    for (cat, idx) in &by_cat {
        let Some(cap) = cfg.caps.get(*cat).copied().or(cfg.default_cap) else {
            continue;
        };
        if idx.len() <= cap {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(cfg.seed, &["resample", cat]));
        let chosen: BTreeSet<usize> = sample(&mut rng, idx.len(), cap).into_iter().collect();
        for (j, &i) in idx.iter().enumerate() {
            if !chosen.contains(&j) {
                keep[i] = false;
                report.drop(RULE_OVER_CAP);
            }
        }
    }
    let kept: Vec<Trajectory> = ts
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(t, _)| t.clone())
        .collect();
    let report = report.finish(&kept);
    (kept, report)
}

// ---------------------------------------------------------------------------
// Reconstruction

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconstructError {
    #[error("task is not an information-retrieval request")]
    NotInfoRetrieval,
    #[error("trace already reports an answer with CallUser")]
    AlreadyHasCallUser,
    #[error("trace does not end with Finished")]
    NotFinished,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn question_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            r"(?i)\b(what|when|where|which|who|whose|why)\b",
            r"(?i)\bhow\s+(much|many|long|far|old|often)\b",
            r"(?i)\b(is|are)\s+there\b",
            r"(?i)\b(check|find|tell\s+me|look\s+up)\b",
            r"[?？]\s*$",
            r"多少|是什么|什么|怎么样|哪|几[个点号天]|吗[?？]?\s*$|查看|查询|告诉我",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static pattern"))
        .collect()
    })
}

/// Whether a task text reads as a question or information request.
pub fn task_is_question(task: &str) -> bool {
    question_patterns().iter().any(|re| re.is_match(task))
}

pub fn is_info_retrieval(t: &Trajectory) -> bool {
    t.info_retrieval == Some(true) || task_is_question(&t.task)
}

pub const CALLUSER_THOUGHT: &str = "The task asks for information, so report the answer to the user before finishing.";

/// Inserts `CallUser(answer)` right before the final `Finished` step.
pub fn reconstruct_info_retrieval(
    t: &Trajectory,
    answer_oracle: &dyn SummarizerOracle,
) -> Result<Trajectory, ReconstructError> {
    let n = t.steps.len();
    let tail_start = n.saturating_sub(2);
    if t.steps[tail_start..]
        .iter()
        .any(|s| s.action.kind() == ActionKind::CallUser)
    {
        return Err(ReconstructError::AlreadyHasCallUser);
    }
    if !is_info_retrieval(t) {
        return Err(ReconstructError::NotInfoRetrieval);
    }
    let last = match t.steps.last() {
        Some(s) if s.action.kind() == ActionKind::Finished => s,
        _ => return Err(ReconstructError::NotFinished),
    };
    let answer = answer_oracle.answer(&t.task, &last.screenshot_ref)?;
    let action = Action::CallUser(answer);
    let inserted = Step {
        index: last.index,
        screenshot_ref: last.screenshot_ref.clone(),
        screen: last.screen,
        thought: CALLUSER_THOUGHT.to_string(),
        raw_action: action.to_string(),
        action,
    };
    let mut out = t.clone();
    out.steps.insert(n - 1, inserted);
    out.renumber();
    out.status = out.status.advance(Status::Reconstructed);
    Ok(out)
}

/// Batch reconstruction. Traces that are not eligible pass through
/// unchanged; oracle failures abort the batch.
pub fn reconstruct_batch(
    ts: &[Trajectory],
    answer_oracle: &dyn SummarizerOracle,
    max_in_flight: usize,
) -> Result<(Vec<Trajectory>, FilterReport), PipelineError> {
    let results = bounded_map(ts, max_in_flight, |t| reconstruct_info_retrieval(t, answer_oracle));
    let mut report = FilterReport::new("reconstruct", ts.len());
    let mut out = Vec::with_capacity(ts.len());
    for (t, r) in ts.iter().zip(results) {
        match r {
            Ok(rebuilt) => {
                report.tally("reconstructed");
                out.push(rebuilt);
            }
            Err(ReconstructError::Oracle(source)) => {
                return Err(PipelineError::Oracle {
                    trace_id: t.trace_id.clone(),
                    source,
                })
            }
            Err(e) => {
                report.tally(match e {
                    ReconstructError::AlreadyHasCallUser => "already_has_calluser",
                    ReconstructError::NotInfoRetrieval => "not_info_retrieval",
                    _ => "not_finished",
                });
                out.push(t.clone());
            }
        }
    }
    let report = report.finish(&out);
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// Quality control of generated traces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    /// Traces shorter than this that do not end in Finished/CallUser are
    /// abnormal exits.
    pub min_len: usize,
    /// Consecutive matching actions that count as a stuck loop.
    pub repeat_k: usize,
    /// Pixel tolerance when comparing repeated actions.
    pub repeat_tol: f64,
    pub orm_threshold: f64,
    /// Route ORM survivors straight to `accepted` instead of review.
    pub skip_review: bool,
    pub max_in_flight: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            min_len: 3,
            repeat_k: 3,
            repeat_tol: 0.0,
            orm_threshold: 0.5,
            skip_review: false,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QcOutcome {
    pub accepted: Vec<Trajectory>,
    pub rejected: Vec<Trajectory>,
    pub needs_review: Vec<Trajectory>,
    pub report: FilterReport,
}

pub fn is_abnormal_exit(t: &Trajectory, min_len: usize) -> bool {
    let terminal = matches!(
        t.last_action().map(Action::kind),
        Some(ActionKind::Finished | ActionKind::CallUser)
    );
    t.len() < min_len && !terminal
}

/// Longest run of consecutive steps whose actions match the run's first.
pub fn longest_repeat(t: &Trajectory, tol: f64) -> usize {
    let mut best = 0;
    let mut start = 0;
    for i in 0..t.steps.len() {
        if !actions_match(&t.steps[start].action, &t.steps[i].action, tol) {
            start = i;
        }
        best = best.max(i - start + 1);
    }
    best
}

pub fn qc_generated(
    ts: &[Trajectory],
    orm: &dyn OrmOracle,
    cfg: &QcConfig,
) -> Result<QcOutcome, PipelineError> {
    if cfg.repeat_k < 2 {
        return Err(PipelineError::Config("repeat_k must be >= 2".into()));
    }
    let scores = bounded_map(ts, cfg.max_in_flight, |t| {
        if is_abnormal_exit(t, cfg.min_len) {
            Ok(Err(RULE_ABNORMAL_EXIT))
        } else if longest_repeat(t, cfg.repeat_tol) >= cfg.repeat_k {
            Ok(Err(RULE_REPEATED_ACTION))
        } else {
            orm.score(t).map(Ok)
        }
    });
    let mut out = QcOutcome {
        report: FilterReport::new("qc", ts.len()),
        ..QcOutcome::default()
    };
    for (t, s) in ts.iter().zip(scores) {
        let s = s.map_err(|source| PipelineError::Oracle {
            trace_id: t.trace_id.clone(),
            source,
        })?;
        let rule = match s {
            Err(rule) => Some(rule),
            Ok(score) if score < cfg.orm_threshold => Some(RULE_LOW_ORM),
            Ok(_) => None,
        };
        match rule {
            Some(rule) => {
                out.report.drop(rule);
                let mut r = t.clone();
                r.status = Status::Rejected;
                out.rejected.push(r);
            }
            None if cfg.skip_review => {
                let mut a = t.clone();
                a.status = Status::Accepted;
                out.accepted.push(a);
            }
            None => out.needs_review.push(t.clone()),
        }
    }
    out.report.tally_split(out.accepted.len(), out.needs_review.len());
    let kept: Vec<Trajectory> = out
        .accepted
        .iter()
        .chain(&out.needs_review)
        .cloned()
        .collect();
    out.report = std::mem::take(&mut out.report).finish(&kept);
    Ok(out)
}

impl FilterReport {
    fn tally_split(&mut self, accepted: usize, needs_review: usize) {
        self.tallies.insert("accepted".into(), accepted);
        self.tallies.insert("needs_review".into(), needs_review);
    }
}

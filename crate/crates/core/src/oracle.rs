//! Interfaces for the model-backed steps (summarizer, outcome reward model,
//! policy rollouts) and deterministic offline stand-ins for them.
//!
//! The mocks derive every output from a SHA-256 of the seed and the request,
//! so results do not depend on call order or thread scheduling.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{parse_action, Action};
use crate::trajectory::{HistoryContext, Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("oracle failure: {0}")]
pub struct OracleError(pub String);

/// Summarizes steps, compares a trace summary with its task and answers
/// questions from a screenshot.
pub trait SummarizerOracle: Send + Sync {
    fn summarize(&self, task: &str, step: &Step) -> Result<String, OracleError>;
    /// Consistency of `trace_summary` with `task`, in `[0, 1]`.
    fn compare(&self, trace_summary: &str, task: &str) -> Result<f64, OracleError>;
    /// Answer to `task` read off the screenshot.
    fn answer(&self, task: &str, screenshot_ref: &str) -> Result<String, OracleError>;
}

/// Whole-trajectory outcome score in `[0, 1]`.
pub trait OrmOracle: Send + Sync {
    fn score(&self, trajectory: &Trajectory) -> Result<f64, OracleError>;
}

#[derive(Debug, Clone)]
pub struct RolloutRequest<'a> {
    pub trace_id: &'a str,
    pub step: u32,
    pub task: &'a str,
    pub screenshot_ref: &'a str,
    pub history: &'a HistoryContext,
    pub r: usize,
}

/// One sampled thought/action pair. `action` is `None` when the policy's
/// output did not parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub thought: String,
    pub action: Option<Action>,
}

#[derive(Serialize, Deserialize)]
struct RolloutWire {
    thought: String,
    action: String,
}

impl Serialize for Rollout {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RolloutWire {
            thought: self.thought.clone(),
            action: self.action.as_ref().map(Action::to_string).unwrap_or_default(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rollout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = RolloutWire::deserialize(d)?;
        Ok(Rollout {
            thought: w.thought,
            action: parse_action(&w.action).ok(),
        })
    }
}

pub trait RolloutOracle: Send + Sync {
    /// Must return exactly `req.r` rollouts.
    fn rollout(&self, req: &RolloutRequest<'_>) -> Result<Vec<Rollout>, OracleError>;
}

// ---------------------------------------------------------------------------
// Hashing helpers

/// Stable 64-bit hash of a seed and a sequence of string parts.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Maps a hash to `[0, 1)`.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMode {
    Fixed(f64),
    /// Uniform in `[0, 1)` from the hash of the input.
    Hashed,
}

// ---------------------------------------------------------------------------
// Mocks

#[derive(Debug, Clone)]
pub struct MockSummarizer {
    pub seed: u64,
    pub mode: ScoreMode,
    /// Tasks for which every call fails.
    pub failing_tasks: BTreeSet<String>,
}

impl MockSummarizer {
    pub fn new(seed: u64, mode: ScoreMode) -> Self {
        Self {
            seed,
            mode,
            failing_tasks: BTreeSet::new(),
        }
    }

    fn check(&self, task: &str) -> Result<(), OracleError> {
        if self.failing_tasks.contains(task) {
            Err(OracleError(format!("mock summarizer refuses task `{task}`")))
        } else {
            Ok(())
        }
    }
}

impl SummarizerOracle for MockSummarizer {
    fn summarize(&self, task: &str, step: &Step) -> Result<String, OracleError> {
        self.check(task)?;
        Ok(format!("step {}: {}", step.index, step.action))
    }

    fn compare(&self, trace_summary: &str, task: &str) -> Result<f64, OracleError> {
        self.check(task)?;
        Ok(match self.mode {
            ScoreMode::Fixed(v) => v,
            ScoreMode::Hashed => unit_interval(stable_hash(self.seed, &["compare", trace_summary, task])),
        })
    }

    fn answer(&self, task: &str, screenshot_ref: &str) -> Result<String, OracleError> {
        self.check(task)?;
        let h = stable_hash(self.seed, &["answer", task, screenshot_ref]);
        Ok(format!("answer-{:08x}", h as u32))
    }
}

#[derive(Debug, Clone)]
pub struct MockOrm {
    pub seed: u64,
    pub mode: ScoreMode,
}

impl OrmOracle for MockOrm {
    fn score(&self, trajectory: &Trajectory) -> Result<f64, OracleError> {
        Ok(match self.mode {
            ScoreMode::Fixed(v) => v,
            ScoreMode::Hashed => unit_interval(stable_hash(self.seed, &["orm", &trajectory.trace_id])),
        })
    }
}

/// How the mock policy behaves.
#[derive(Debug, Clone, PartialEq)]
pub enum RolloutBehavior {
    /// Every rollout reproduces the ground-truth action with this thought.
    AlwaysMatch { thought: String },
    /// No rollout reproduces the ground-truth action.
    NeverMatch,
    /// Matches only at the listed 1-based steps.
    MatchAtSteps { steps: BTreeSet<u32>, thought: String },
    /// Each rollout matches with probability `match_prob`; thoughts vary in
    /// length and wording.
    Seeded { match_prob: f64 },
}

const WORDS: &[&str] = &[
    "the", "screen", "shows", "settings", "button", "I", "should", "tap", "open", "menu", "next",
    "scroll", "to", "find", "option", "task", "requires", "search", "field", "then", "confirm",
    "page", "list", "item", "visible", "now",
];

/// Seed-deterministic stand-in for the policy, keyed by the ground truth of
/// a dataset.
#[derive(Debug, Clone)]
pub struct MockRolloutOracle {
    pub behavior: RolloutBehavior,
    pub seed: u64,
    ground_truth: HashMap<(String, u32), Action>,
    failing_steps: BTreeSet<(String, u32)>,
}

impl MockRolloutOracle {
    pub fn new(behavior: RolloutBehavior, seed: u64) -> Self {
        Self {
            behavior,
            seed,
            ground_truth: HashMap::new(),
            failing_steps: BTreeSet::new(),
        }
    }

    pub fn with_ground_truth<'a>(mut self, ts: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        for t in ts {
            for s in &t.steps {
                self.ground_truth
                    .insert((t.trace_id.clone(), s.index), s.action.clone());
            }
        }
        self
    }

    /// Makes every call for `(trace_id, step)` fail.
    pub fn failing_at(mut self, trace_id: &str, step: u32) -> Self {
        self.failing_steps.insert((trace_id.to_string(), step));
        self
    }

    fn miss(gt: &Action) -> Action {
        if *gt == Action::Wait {
            Action::PressBack
        } else {
            Action::Wait
        }
    }

    fn seeded_thought(&self, h: u64) -> String {
        let n = 3 + (h % 18) as usize;
        (0..n)
            .map(|i| WORDS[((h >> (i % 8 * 8)) as usize + i * 7) % WORDS.len()])
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl RolloutOracle for MockRolloutOracle {
    fn rollout(&self, req: &RolloutRequest<'_>) -> Result<Vec<Rollout>, OracleError> {
        let key = (req.trace_id.to_string(), req.step);
        if self.failing_steps.contains(&key) {
            return Err(OracleError(format!(
                "mock rollout failure at {} step {}",
                req.trace_id, req.step
            )));
        }
        let gt = self.ground_truth.get(&key).ok_or_else(|| {
            OracleError(format!(
                "no ground truth for {} step {}",
                req.trace_id, req.step
            ))
        })?;
        let out = (0..req.r)
            .map(|r| match &self.behavior {
                RolloutBehavior::AlwaysMatch { thought } => Rollout {
                    thought: thought.clone(),
                    action: Some(gt.clone()),
                },
                RolloutBehavior::NeverMatch => Rollout {
                    thought: format!("off-track rollout {r}"),
                    action: Some(Self::miss(gt)),
                },
                RolloutBehavior::MatchAtSteps { steps, thought } => Rollout {
                    thought: thought.clone(),
                    action: Some(if steps.contains(&req.step) {
                        gt.clone()
                    } else {
                        Self::miss(gt)
                    }),
                },
                RolloutBehavior::Seeded { match_prob } => {
                    let rs = r.to_string();
                    let step = req.step.to_string();
                    let h = stable_hash(self.seed, &["rollout", req.trace_id, &step, &rs]);
                    let hit = unit_interval(stable_hash(h, &["hit"])) < *match_prob;
                    Rollout {
                        thought: self.seeded_thought(h),
                        action: Some(if hit { gt.clone() } else { Self::miss(gt) }),
                    }
                }
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_stable() {
        assert_eq!(stable_hash(1, &["a", "b"]), stable_hash(1, &["a", "b"]));
        assert_ne!(stable_hash(1, &["ab"]), stable_hash(1, &["a", "b"]));
        assert_ne!(stable_hash(1, &["a"]), stable_hash(2, &["a"]));
        let u = unit_interval(u64::MAX);
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn rollout_wire_tolerates_garbage() {
        let r: Rollout = serde_json::from_str(r#"{"thought":"t","action":"Jump()"}"#).unwrap();
        assert_eq!(r.action, None);
        let r: Rollout = serde_json::from_str(r#"{"thought":"t","action":"Wait()"}"#).unwrap();
        assert_eq!(r.action, Some(Action::Wait));
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"thought":"t","action":"Wait()"}"#
        );
    }
}

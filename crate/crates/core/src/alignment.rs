//! History alignment between training epochs and variant generation for
//! sparse actions.
//!
//! For every step the current policy is sampled `R` times on the step's
//! screenshot and its *original* history; thoughts whose action matches the
//! ground truth form that step's pool. Only after all pools of a trajectory
//! are collected is each step's thought replaced by a pool member. Ground
//! truth actions never change.
//!
//! Sparse enhancement then builds extra samples for steps whose action kind
//! is rare, each with a different combination of pooled history thoughts.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{actions_match, ActionKind};
use crate::oracle::{stable_hash, RolloutOracle, RolloutRequest};
use crate::pipeline::bounded_map;
use crate::trajectory::{history_context, ActionStats, Augmentation, Status, Trajectory};

pub const POOLS_SCHEMA: &str = "venus-pools/1";

/// Candidate thoughts for one step, deduplicated, in rollout order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThoughtPool(pub Vec<String>);

impl ThoughtPool {
    /// Adds `thought` unless an identical one is present.
    pub fn insert(&mut self, thought: String) {
        if !self.0.contains(&thought) {
            self.0.push(thought);
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, thought: &str) -> bool {
        self.0.iter().any(|t| t == thought)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TieBreak {
    First,
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectPolicy {
    /// Preferred thought length in characters.
    pub target_length: usize,
    pub tie_break: TieBreak,
}

impl Default for SelectPolicy {
    fn default() -> Self {
        Self {
            target_length: 200,
            tie_break: TieBreak::First,
        }
    }
}

/// Picks the pool member whose length is closest to the target; an empty
/// pool keeps `original`.
pub fn select_replacement(pool: &ThoughtPool, policy: &SelectPolicy, original: &str) -> String {
    let gap = |t: &String| t.chars().count().abs_diff(policy.target_length);
    let Some(best) = pool.0.iter().map(gap).min() else {
        return original.to_string();
    };
    let tied: Vec<&String> = pool.0.iter().filter(|t| gap(t) == best).collect();
    let pick = match policy.tie_break {
        TieBreak::First => 0,
        TieBreak::SeededRandom { seed } => {
            let parts: Vec<&str> = tied.iter().map(|s| s.as_str()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &parts));
            rng.gen_range(0..tied.len())
        }
    };
    tied[pick].clone()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("step {step}: {message}")]
pub struct StepFailure {
    pub step: u32,
    pub message: String,
}

/// Pools for every step of one trajectory plus any per-step oracle failures
/// (whose pools stay empty).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolCollection {
    pub pools: Vec<ThoughtPool>,
    pub failures: Vec<StepFailure>,
}

pub fn collect_thought_pools(
    t: &Trajectory,
    oracle: &dyn RolloutOracle,
    rollouts: usize,
    tol: f64,
) -> PoolCollection {
    let mut out = PoolCollection::default();
    for (i, step) in t.steps.iter().enumerate() {
        let mut pool = ThoughtPool::default();
        let history = history_context(t, i + 1).expect("step index in range");
        let req = RolloutRequest {
            trace_id: &t.trace_id,
            step: step.index,
            task: &t.task,
            screenshot_ref: &step.screenshot_ref,
            history: &history,
            r: rollouts,
        };
        match oracle.rollout(&req) {
            Ok(samples) if samples.len() == rollouts => {
                for s in samples {
                    if matches!(&s.action, Some(a) if actions_match(a, &step.action, tol)) {
                        pool.insert(s.thought);
                    }
                }
            }
            Ok(samples) => out.failures.push(StepFailure {
                step: step.index,
                message: format!("expected {rollouts} rollouts, got {}", samples.len()),
            }),
            Err(e) => out.failures.push(StepFailure {
                step: step.index,
                message: e.to_string(),
            }),
        }
        out.pools.push(pool);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub rollouts: usize,
    /// Pixel tolerance for the action match.
    pub tol: f64,
    pub policy: SelectPolicy,
    pub max_in_flight: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            rollouts: 8,
            tol: 14.0,
            policy: SelectPolicy::default(),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("rollout count must be >= 1")]
    NoRollouts,
    #[error("tolerance must be finite and >= 0")]
    BadTolerance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignOutcome {
    pub trajectories: Vec<Trajectory>,
    /// Pools per trace id, as collected this epoch.
    pub pools: BTreeMap<String, Vec<ThoughtPool>>,
    pub failures: BTreeMap<String, Vec<StepFailure>>,
}

impl AlignOutcome {
    pub fn pools_file(&self) -> PoolsFile {
        PoolsFile {
            schema: POOLS_SCHEMA.to_string(),
            traces: self.pools.clone(),
        }
    }
}

/// On-disk pools, consumed by `enhance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolsFile {
    pub schema: String,
    pub traces: BTreeMap<String, Vec<ThoughtPool>>,
}

fn align_one(t: &Trajectory, oracle: &dyn RolloutOracle, cfg: &AlignConfig) -> (Trajectory, PoolCollection) {
    let collected = collect_thought_pools(t, oracle, cfg.rollouts, cfg.tol);
    let mut out = t.clone();
    for (step, pool) in out.steps.iter_mut().zip(&collected.pools) {
        step.thought = select_replacement(pool, &cfg.policy, &step.thought);
    }
    out.status = out.status.advance(Status::Aligned);
    (out, collected)
}

/// One alignment pass over a dataset.
pub fn align_epoch(
    ts: &[Trajectory],
    oracle: &dyn RolloutOracle,
    cfg: &AlignConfig,
) -> Result<AlignOutcome, AlignError> {
    if cfg.rollouts == 0 {
        return Err(AlignError::NoRollouts);
    }
    if !(cfg.tol.is_finite() && cfg.tol >= 0.0) {
        return Err(AlignError::BadTolerance);
    }
    let results = bounded_map(ts, cfg.max_in_flight, |t| align_one(t, oracle, cfg));
    let mut out = AlignOutcome::default();
    for (t, collected) in results {
        if !collected.failures.is_empty() {
            out.failures.insert(t.trace_id.clone(), collected.failures);
        }
        out.pools.insert(t.trace_id.clone(), collected.pools);
        out.trajectories.push(t);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sparse enhancement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SparseSelector {
    Explicit { kinds: BTreeSet<ActionKind> },
    /// Kinds present in the data with frequency below `tau`.
    Threshold { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementConfig {
    pub sparse: SparseSelector,
    /// Maximum variants per sparse step.
    pub max_variants: usize,
    pub seed: u64,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            sparse: SparseSelector::Threshold { tau: 0.05 },
            max_variants: 4,
            seed: 0,
        }
    }
}

pub fn identify_sparse_actions(stats: &ActionStats, cfg: &EnhancementConfig) -> BTreeSet<ActionKind> {
    match &cfg.sparse {
        SparseSelector::Explicit { kinds } => kinds.clone(),
        SparseSelector::Threshold { tau } => stats
            .counts
            .iter()
            .filter(|(&k, &c)| c > 0 && stats.frequency(k) < *tau)
            .map(|(&k, _)| k)
            .collect(),
    }
}

/// Number of distinct history combinations for step `n` (1-based), with an
/// empty pool contributing the original thought only. Saturates.
pub fn combination_count(pools: &[ThoughtPool], n: usize) -> u128 {
    pools[..n - 1]
        .iter()
        .fold(1u128, |acc, p| acc.saturating_mul(p.len().max(1) as u128))
}

/// Decodes a mixed-radix index into one choice per previous step.
fn decode(mut index: u128, radices: &[usize]) -> Vec<usize> {
    radices
        .iter()
        .map(|&r| {
            let digit = (index % r as u128) as usize;
            index /= r as u128;
            digit
        })
        .collect()
}

fn distinct_indices(rng: &mut ChaCha8Rng, space: u128, count: usize) -> Vec<u128> {
    if let Ok(small) = usize::try_from(space) {
        let mut v: Vec<u128> = sample(rng, small, count)
            .into_iter()
            .map(|i| i as u128)
            .collect();
        v.sort_unstable();
        return v;
    }
    let mut seen = HashSet::new();
    while seen.len() < count {
        seen.insert(rng.gen::<u128>() % space);
    }
    let mut v: Vec<u128> = seen.into_iter().collect();
    v.sort_unstable();
    v
}

/// Variant samples for every sparse step of `t`.
///
/// A variant for step `n` is the prefix `1..=n` with the thoughts of steps
/// `1..n` drawn from their pools; step `n` keeps its own thought. Each
/// (trace, step) yields `min(M, prod max(|pool_i|, 1))` variants with
/// pairwise-distinct history tuples.
pub fn enhance_sparse(
    t: &Trajectory,
    pools: &[ThoughtPool],
    sparse: &BTreeSet<ActionKind>,
    max_variants: usize,
    seed: u64,
) -> Vec<Trajectory> {
    let mut out = Vec::new();
    if max_variants == 0 || pools.len() != t.steps.len() {
        return out;
    }
    for (i, step) in t.steps.iter().enumerate() {
        if !sparse.contains(&step.action.kind()) {
            continue;
        }
        let n = i + 1;
        let space = combination_count(pools, n);
        let count = (max_variants as u128).min(space) as usize;
        let radices: Vec<usize> = pools[..i].iter().map(|p| p.len().max(1)).collect();
        let step_s = step.index.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &["enhance", &t.trace_id, &step_s]));
        for (m, index) in distinct_indices(&mut rng, space, count).into_iter().enumerate() {
            let choice = decode(index, &radices);
            let mut v = t.clone();
            v.steps.truncate(n);
            for (j, &c) in choice.iter().enumerate() {
                if let Some(thought) = pools[j].0.get(c) {
                    v.steps[j].thought = thought.clone();
                }
            }
            v.trace_id = format!("{}::s{}v{}", t.trace_id, step.index, m);
            v.augmentation = Some(Augmentation {
                source_trace_id: t.trace_id.clone(),
                step: step.index,
                variant: m as u32,
            });
            out.push(v);
        }
    }
    out
}

//! Group-relative policy objective over externally supplied rewards and
//! token log-probabilities.
//!
//! ```text
//! A_i   = (r_i - mean(r)) / max(std(r), std_floor)          (population std)
//! J     = 1/G sum_i 1/|o_i| sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - kl_beta k3 ]
//! rho   = exp(logp_new - logp_old)
//! k3    = exp(logp_ref - logp_new) - (logp_ref - logp_new) - 1
//! ```
//!
//! No model is involved: callers pass the per-token log-probabilities of the
//! current, behaviour and reference policies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrpoError {
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rollout {0} has no tokens")]
    EmptyRollout(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "F: Scalar + Deserialize<'de>"))]
pub struct GrpoConfig<F> {
    /// Clip range.
    pub epsilon: F,
    /// KL coefficient.
    pub kl_beta: F,
    /// Lower bound on the std used for normalization.
    pub std_floor: F,
}

impl<F: Scalar> Default for GrpoConfig<F> {
    fn default() -> Self {
        Self {
            epsilon: lit(0.2),
            kl_beta: lit(1e-3),
            std_floor: lit(1e-8),
        }
    }
}

impl<F: Scalar> GrpoConfig<F> {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > F::zero()) {
            return Err(GrpoError::InvalidConfig("epsilon must be > 0"));
        }
        if !(self.kl_beta >= F::zero()) {
            return Err(GrpoError::InvalidConfig("kl_beta must be >= 0"));
        }
        if !(self.std_floor > F::zero()) {
            return Err(GrpoError::InvalidConfig("std_floor must be > 0"));
        }
        Ok(())
    }
}

/// `G` sampled responses for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup<F> {
    pub rewards: Vec<F>,
    /// `[G][|o_i|]` log-probs under the policy being optimized.
    pub logp_new: Vec<Vec<F>>,
    /// Same shape, under the policy that sampled the rollouts.
    pub logp_old: Vec<Vec<F>>,
    /// Same shape, under the frozen reference policy.
    pub logp_ref: Vec<Vec<F>>,
}

impl<F: Scalar> RolloutGroup<F> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.rewards.len();
        if g == 0 {
            return Err(GrpoError::EmptyGroup);
        }
        for (name, t) in [
            ("logp_new", &self.logp_new),
            ("logp_old", &self.logp_old),
            ("logp_ref", &self.logp_ref),
        ] {
            if t.len() != g {
                return Err(GrpoError::ShapeMismatch(format!(
                    "{name} has {} rollouts, rewards has {g}",
                    t.len()
                )));
            }
        }
        for i in 0..g {
            let n = self.logp_new[i].len();
            if n == 0 {
                return Err(GrpoError::EmptyRollout(i));
            }
            if self.logp_old[i].len() != n || self.logp_ref[i].len() != n {
                return Err(GrpoError::ShapeMismatch(format!(
                    "rollout {i}: new={n} old={} ref={}",
                    self.logp_old[i].len(),
                    self.logp_ref[i].len()
                )));
            }
        }
        Ok(())
    }
}

/// Normalized advantages, one per rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdvantageVector<F>(pub Vec<F>);

impl<F> std::ops::Deref for AdvantageVector<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.0
    }
}

/// Mean and population standard deviation.
pub fn mean_std<F: Scalar>(values: &[F]) -> (F, F) {
    let n = lit::<F>(values.len() as f64);
    let mean = values.iter().copied().sum::<F>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    (mean, var.sqrt())
}

/// Group-normalized advantages. A group whose rewards are all equal carries
/// no signal and yields zeros.
pub fn group_advantages<F: Scalar>(rewards: &[F], cfg: &GrpoConfig<F>) -> AdvantageVector<F> {
    let Some(&first) = rewards.first() else {
        return AdvantageVector(Vec::new());
    };
    if rewards.iter().all(|&r| r == first) {
        return AdvantageVector(vec![F::zero(); rewards.len()]);
    }
    let (mean, std) = mean_std(rewards);
    let denom = std.max(cfg.std_floor);
    AdvantageVector(rewards.iter().map(|&r| (r - mean) / denom).collect())
}

pub fn clip<F: Scalar>(v: F, lo: F, hi: F) -> F {
    v.max(lo).min(hi)
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate<F: Scalar>(ratio: F, advantage: F, cfg: &GrpoConfig<F>) -> F {
    let clipped = clip(ratio, F::one() - cfg.epsilon, F::one() + cfg.epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token k3 estimate of KL(new || ref); never negative.
pub fn kl_penalty<F: Scalar>(logp_new: F, logp_ref: F) -> F {
    let d = logp_ref - logp_new;
    // exp(d) - d - 1 >= 0 analytically; guard the rounding at d ~ 0.
    (d.exp() - d - F::one()).max(F::zero())
}

fn token_term<F: Scalar>(
    new: F,
    old: F,
    reference: F,
    advantage: F,
    cfg: &GrpoConfig<F>,
) -> F {
    let ratio = (new - old).exp();
    clipped_surrogate(ratio, advantage, cfg) - cfg.kl_beta * kl_penalty(new, reference)
}

/// The group objective (to be maximized).
pub fn grpo_objective<F: Scalar>(group: &RolloutGroup<F>, cfg: &GrpoConfig<F>) -> Result<F, GrpoError> {
    group.validate()?;
    let adv = group_advantages(&group.rewards, cfg);
    let g = lit::<F>(group.len() as f64);
    let mut total = F::zero();
    for (i, &a) in adv.iter().enumerate() {
        let n = group.logp_new[i].len();
        let sum = (0..n)
            .map(|t| {
                token_term(
                    group.logp_new[i][t],
                    group.logp_old[i][t],
                    group.logp_ref[i][t],
                    a,
                    cfg,
                )
            })
            .sum::<F>();
        total = total + sum / lit(n as f64);
    }
    Ok(total / g)
}

/// Gradient of [`grpo_objective`] with respect to every `logp_new` entry,
/// shaped like `logp_new`.
///
/// Where the clipped branch is strictly smaller the surrogate is flat in the
/// ratio; at exact ties the unclipped branch is used.
pub fn grpo_objective_grad<F: Scalar>(
    group: &RolloutGroup<F>,
    cfg: &GrpoConfig<F>,
) -> Result<Vec<Vec<F>>, GrpoError> {
    group.validate()?;
    let adv = group_advantages(&group.rewards, cfg);
    let g = lit::<F>(group.len() as f64);
    let lo = F::one() - cfg.epsilon;
    let hi = F::one() + cfg.epsilon;
    let grads = adv
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let n = group.logp_new[i].len();
            let scale = F::one() / (g * lit(n as f64));
            (0..n)
                .map(|t| {
                    let new = group.logp_new[i][t];
                    let ratio = (new - group.logp_old[i][t]).exp();
                    let unclipped = ratio * a;
                    let clipped = clip(ratio, lo, hi) * a;
                    let surrogate = if unclipped <= clipped { a * ratio } else { F::zero() };
                    let kl = cfg.kl_beta * ((group.logp_ref[i][t] - new).exp() - F::one());
                    (surrogate + kl) * scale
                })
                .collect()
        })
        .collect();
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GrpoConfig<f64> {
        GrpoConfig {
            epsilon: 0.2,
            kl_beta: 0.04,
            std_floor: 1e-8,
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 0.0], &cfg()).0, vec![1.0, -1.0]);
        assert_eq!(group_advantages(&[0.5, 0.5, 0.5], &cfg()).0, vec![0.0; 3]);
        let a = group_advantages(&[3.0, 1.0, 2.0], &cfg());
        // mean 2, population std sqrt(2/3)
        let expected = [1.224744871391589, -1.224744871391589, 0.0];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(group_advantages::<f64>(&[], &cfg()).is_empty());
    }

    #[test]
    fn surrogate_examples() {
        let c = cfg();
        assert_eq!(clipped_surrogate(1.0, 1.0, &c), 1.0);
        assert!((clipped_surrogate(2.0, 1.0, &c) - 1.2).abs() < 1e-12);
        assert_eq!(clipped_surrogate(2.0, -1.0, &c), -2.0);
        assert_eq!(clipped_surrogate(0.9, 3.0, &c), 0.9 * 3.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_penalty(-1.3, -1.3), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((kl_penalty(-2.0, -2.0 + ln2) - (2.0 - ln2 - 1.0)).abs() < 1e-12);
        assert!((kl_penalty(-2.0, -2.0 + ln2) - 0.3069).abs() < 1e-4);
    }

    fn group(rewards: Vec<f64>, lp: Vec<Vec<f64>>) -> RolloutGroup<f64> {
        RolloutGroup {
            rewards,
            logp_new: lp.clone(),
            logp_old: lp.clone(),
            logp_ref: lp,
        }
    }

    #[test]
    fn objective_examples() {
        let g = group(vec![1.0, 0.0], vec![vec![-0.5, -1.0], vec![-2.0]]);
        assert!(grpo_objective(&g, &cfg()).unwrap().abs() < 1e-15);

        // G = 1: degenerate advantage, objective is -kl_beta * mean KL
        let mut single = group(vec![0.7], vec![vec![-1.0, -2.0]]);
        single.logp_ref = vec![vec![-1.0 + std::f64::consts::LN_2, -2.0]];
        let k = kl_penalty(-1.0, -1.0 + std::f64::consts::LN_2);
        let expected = -cfg().kl_beta * (k + 0.0) / 2.0;
        assert!((grpo_objective(&single, &cfg()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let mut g = group(vec![1.0, 0.0], vec![vec![-0.5], vec![-2.0]]);
        g.logp_old[1].push(0.0);
        assert!(matches!(grpo_objective(&g, &cfg()), Err(GrpoError::ShapeMismatch(_))));
        let g = group(vec![], vec![]);
        assert_eq!(grpo_objective(&g, &cfg()), Err(GrpoError::EmptyGroup));
        let g = group(vec![1.0], vec![vec![]]);
        assert_eq!(grpo_objective(&g, &cfg()), Err(GrpoError::EmptyRollout(0)));
    }

    #[test]
    fn f32_objective() {
        let g = RolloutGroup::<f32> {
            rewards: vec![1.0, 0.0],
            logp_new: vec![vec![-0.5], vec![-1.0]],
            logp_old: vec![vec![-0.5], vec![-1.0]],
            logp_ref: vec![vec![-0.5], vec![-1.0]],
        };
        let v = grpo_objective(&g, &GrpoConfig::default()).unwrap();
        assert!(v.abs() < 1e-6);
    }
}

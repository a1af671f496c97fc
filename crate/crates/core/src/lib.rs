//! Core library for training and evaluating a GUI agent: the action language,
//! rule-based rewards, GRPO math, trajectory data, the data-cleaning
//! pipeline, history alignment and offline evaluation.
//!
//! Reward and GRPO code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common instantiations.

pub mod action;
pub mod alignment;
pub mod eval;
pub mod geometry;
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod grpo;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod reward;
pub mod scalar;
pub mod synth;
pub mod trajectory;

pub use action::{parse_action, parse_model_output, Action, ActionKind, Direction, ModelOutput, ParseError};
pub use geometry::{BBox, Point, ScreenSize};
pub use scalar::Scalar;
pub use trajectory::{Step, Trajectory};

pub type RewardConfig64 = reward::RewardConfig<f64>;
pub type RewardConfig32 = reward::RewardConfig<f32>;
pub type RewardBreakdown64 = reward::RewardBreakdown<f64>;
pub type RewardBreakdown32 = reward::RewardBreakdown<f32>;
pub type GrpoConfig64 = grpo::GrpoConfig<f64>;
pub type GrpoConfig32 = grpo::GrpoConfig<f32>;
pub type RolloutGroup64 = grpo::RolloutGroup<f64>;
pub type RolloutGroup32 = grpo::RolloutGroup<f32>;
pub type AdvantageVector64 = grpo::AdvantageVector<f64>;
pub type AdvantageVector32 = grpo::AdvantageVector<f32>;

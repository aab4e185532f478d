//! Reward functions, group-normalized advantages and the masked clipped
//! policy objective.

mod loss;
pub mod rewards;

pub use loss::{
    group_advantages, grpo_arlt_gradient, grpo_arlt_loss, grpo_loss_single_turn, kl_estimate,
    token_ratio, GroupBatch, LossConfig, LossDiagnostics, TokenRecord, LOG_RATIO_CLAMP,
};
pub use rewards::{
    reward_deepsearch, reward_match, reward_math, reward_swe, reward_visual_reasoner,
    CuriosityParams, Matcher, NormalizedExact, ScoredReward,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("group of size {0} is too small for advantage normalization")]
    GroupTooSmall(usize),
    #[error("{what} has {found} entries but the trajectory has {expected} tokens")]
    MaskMismatch { what: &'static str, expected: usize, found: usize },
    #[error("{trajectories} trajectories but {advantages} advantages")]
    AdvantageMismatch { trajectories: usize, advantages: usize },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

//! Group-relative advantages and the clipped surrogate objective with
//! observation-token masking.
//!
//! All objectives here are values to *maximize*. Trainers negate them.

use serde::{Deserialize, Serialize};

use super::KernelError;
use crate::trajectory::TokenId;

/// Log-ratio bound applied before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: TokenId,
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: Option<f64>,
    /// True for policy-generated tokens.
    pub action: bool,
}

impl TokenRecord {
    /// Zips per-token columns into records. Every column must match the
    /// token count.
    pub fn zip(
        tokens: &[TokenId],
        mask: &[bool],
        logp_new: &[f64],
        logp_old: &[f64],
        logp_ref: Option<&[f64]>,
    ) -> Result<Vec<Self>, KernelError> {
        let n = tokens.len();
        let check = |what: &'static str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(KernelError::MaskMismatch { what, expected: n, found: len })
            }
        };
        check("mask", mask.len())?;
        check("logp_new", logp_new.len())?;
        check("logp_old", logp_old.len())?;
        if let Some(r) = logp_ref {
            check("logp_ref", r.len())?;
        }
        Ok((0..n)
            .map(|t| TokenRecord {
                token: tokens[t],
                logp_new: logp_new[t],
                logp_old: logp_old[t],
                logp_ref: logp_ref.map(|r| r[t]),
                action: mask[t],
            })
            .collect())
    }
}

/// G trajectories sampled for the same input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub group_id: String,
    pub trajectories: Vec<Vec<TokenRecord>>,
    pub rewards: Vec<f64>,
}

impl GroupBatch {
    pub fn size(&self) -> usize {
        self.trajectories.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon_clip: f64,
    #[serde(default)]
    pub kl_beta: f64,
    #[serde(default = "default_std_floor")]
    pub std_floor: f64,
}

fn default_std_floor() -> f64 {
    1e-6
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { epsilon_clip: 0.2, kl_beta: 0.0, std_floor: default_std_floor() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        let ok = self.epsilon_clip > 0.0
            && self.epsilon_clip < 1.0
            && self.kl_beta >= 0.0
            && self.std_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KernelError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Standardizes rewards within a group: `(R_i - mean) / max(std, floor)`
/// with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, KernelError> {
    if rewards.len() < 2 {
        return Err(KernelError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    // offset by the first reward so an all-equal group has an exactly zero numerator
    let base = rewards[0];
    let mean = base + rewards.iter().map(|r| r - base).sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Importance ratio `exp(logp_new - logp_old)` with the log-ratio clamped to
/// `±LOG_RATIO_CLAMP`. The second value reports whether the clamp fired.
pub fn token_ratio(rec: &TokenRecord) -> (f64, bool) {
    let d = rec.logp_new - rec.logp_old;
    let c = d.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    (c.exp(), c != d)
}

/// Per-token KL estimate `exp(ref - new) - (ref - new) - 1`, non-negative.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    d.exp() - d - 1.0
}

fn surrogate(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossDiagnostics {
    pub policy_term: f64,
    pub kl: f64,
    /// Fraction of masked tokens where the clipped arm was taken.
    pub clip_fraction: f64,
    pub masked_tokens: usize,
    pub total_tokens: usize,
    pub ratio_clamps: usize,
}

/// Which tokens count and how each trajectory is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Masking {
    /// Only action tokens, normalized by the action-token count.
    Actions,
    /// Every token, normalized by the trajectory length.
    AllTokens,
}

fn check_alignment(batch: &GroupBatch, advantages: &[f64]) -> Result<(), KernelError> {
    if batch.trajectories.len() != advantages.len() || batch.rewards.len() != advantages.len() {
        return Err(KernelError::AdvantageMismatch {
            trajectories: batch.trajectories.len(),
            advantages: advantages.len(),
        });
    }
    if batch.trajectories.is_empty() {
        return Err(KernelError::GroupTooSmall(0));
    }
    Ok(())
}

fn objective(
    batch: &GroupBatch,
    advantages: &[f64],
    cfg: &LossConfig,
    masking: Masking,
) -> Result<(f64, LossDiagnostics), KernelError> {
    cfg.validate()?;
    check_alignment(batch, advantages)?;
    let g = batch.size() as f64;
    let mut diag = LossDiagnostics::default();
    let mut clipped = 0usize;
    let mut policy = 0.0;
    let mut kl_total = 0.0;
    for (traj, &adv) in batch.trajectories.iter().zip(advantages) {
        diag.total_tokens += traj.len();
        let counted = |r: &&TokenRecord| masking == Masking::AllTokens || r.action;
        let n = traj.iter().filter(counted).count();
        if n == 0 {
            continue;
        }
        diag.masked_tokens += n;
        let mut sum = 0.0;
        let mut kl = 0.0;
        for rec in traj.iter().filter(counted) {
            let (ratio, clamped) = token_ratio(rec);
            diag.ratio_clamps += usize::from(clamped);
            let (s, was_clipped) = surrogate(ratio, adv, cfg.epsilon_clip);
            clipped += usize::from(was_clipped);
            sum += s;
            if let Some(r) = rec.logp_ref {
                kl += kl_estimate(rec.logp_new, r);
            }
        }
        policy += sum / n as f64;
        kl_total += kl / n as f64;
    }
    diag.policy_term = policy / g;
    diag.kl = kl_total / g;
    diag.clip_fraction = if diag.masked_tokens == 0 { 0.0 } else { clipped as f64 / diag.masked_tokens as f64 };
    Ok((diag.policy_term - cfg.kl_beta * diag.kl, diag))
}

/// Multi-turn objective: tokens with `action == false` contribute nothing
/// and each trajectory is normalized by its action-token count.
pub fn grpo_arlt_loss(
    batch: &GroupBatch,
    advantages: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, LossDiagnostics), KernelError> {
    objective(batch, advantages, cfg, Masking::Actions)
}

/// Single-turn objective over every token of each trajectory.
pub fn grpo_loss_single_turn(
    batch: &GroupBatch,
    advantages: &[f64],
    cfg: &LossConfig,
) -> Result<f64, KernelError> {
    objective(batch, advantages, cfg, Masking::AllTokens).map(|(o, _)| o)
}

/// Gradient of [`grpo_arlt_loss`] with respect to every `logp_new`, laid out
/// like `batch.trajectories`. Tokens on the clipped arm, masked tokens, and
/// tokens whose log-ratio hit the clamp have zero policy gradient.
pub fn grpo_arlt_gradient(
    batch: &GroupBatch,
    advantages: &[f64],
    cfg: &LossConfig,
) -> Result<Vec<Vec<f64>>, KernelError> {
    cfg.validate()?;
    check_alignment(batch, advantages)?;
    let g = batch.size() as f64;
    Ok(batch
        .trajectories
        .iter()
        .zip(advantages)
        .map(|(traj, &adv)| {
            let n = traj.iter().filter(|r| r.action).count();
            traj.iter()
                .map(|rec| {
                    if !rec.action {
                        return 0.0;
                    }
                    let scale = 1.0 / (g * n as f64);
                    let (ratio, clamped) = token_ratio(rec);
                    let (_, was_clipped) = surrogate(ratio, adv, cfg.epsilon_clip);
                    let policy = if clamped || was_clipped { 0.0 } else { ratio * adv };
                    let kl = rec.logp_ref.map_or(0.0, |r| 1.0 - (r - rec.logp_new).exp());
                    scale * (policy - cfg.kl_beta * kl)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(new: f64, old: f64, action: bool) -> TokenRecord {
        TokenRecord { token: TokenId(0), logp_new: new, logp_old: old, logp_ref: None, action }
    }

    fn batch(trajs: Vec<Vec<TokenRecord>>, rewards: Vec<f64>) -> GroupBatch {
        GroupBatch { group_id: "g".into(), trajectories: trajs, rewards }
    }

    #[test]
    fn advantages_of_balanced_group() {
        assert_eq!(group_advantages(&[1.0, -1.0, 1.0, -1.0], 1e-6).unwrap(), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(group_advantages(&[1.0, 0.0], 1e-6).unwrap(), vec![1.0, -1.0]);
        assert_eq!(group_advantages(&[0.5; 5], 1e-6).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_reward_group_is_rejected() {
        assert_eq!(group_advantages(&[1.0], 1e-6), Err(KernelError::GroupTooSmall(1)));
    }

    #[test]
    fn ratio_values() {
        assert_eq!(token_ratio(&rec(-1.0, -1.0, true)), (1.0, false));
        let (r, _) = token_ratio(&rec(1.5f64.ln() - 2.0, -2.0, true));
        assert!((r - 1.5).abs() < 1e-12);
        let (r, clamped) = token_ratio(&rec(-1000.0, 0.0, true));
        assert!(clamped && r > 0.0 && r.is_finite());
    }

    #[test]
    fn clip_arm_caps_positive_advantage() {
        let b = batch(vec![vec![rec(1.5f64.ln(), 0.0, true)], vec![rec(0.0, 0.0, true)]], vec![1.0, 0.0]);
        let (obj, diag) = grpo_arlt_loss(&b, &[1.0, 0.0], &LossConfig::default()).unwrap();
        // (min(1.5, 1.2) * 1 + 0) / 2
        assert!((obj - 0.6).abs() < 1e-12);
        assert_eq!(diag.masked_tokens, 2);
        assert!((diag.clip_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ratio_one_gives_mean_advantage() {
        let t = |n: usize, a: bool| (0..n).map(|i| rec(-0.1 * i as f64, -0.1 * i as f64, a)).collect::<Vec<_>>();
        let mut t0 = t(3, true);
        t0.extend(t(2, false));
        let b = batch(vec![t0, t(4, true), t(1, true)], vec![1.0, 0.0, 2.0]);
        let adv = [0.7, -0.2, 0.4];
        let (obj, _) = grpo_arlt_loss(&b, &adv, &LossConfig::default()).unwrap();
        assert!((obj - (0.7 - 0.2 + 0.4) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kl_term_is_zero_when_reference_matches() {
        let mut r = rec(-0.3, -0.3, true);
        r.logp_ref = Some(-0.3);
        let b = batch(vec![vec![r], vec![r]], vec![1.0, 0.0]);
        let cfg = LossConfig { kl_beta: 0.5, ..Default::default() };
        let (_, d) = grpo_arlt_loss(&b, &[1.0, -1.0], &cfg).unwrap();
        assert_eq!(d.kl, 0.0);
        assert!(kl_estimate(-1.0, -2.0) > 0.0);
    }

    #[test]
    fn observation_tokens_do_not_matter() {
        let mut a = vec![rec(-0.2, -0.3, true), rec(-0.5, -0.1, false), rec(-0.9, -1.0, true)];
        let b1 = batch(vec![a.clone(), vec![rec(-1.0, -1.1, true)]], vec![1.0, 0.0]);
        a[1].logp_new = -7.0;
        a[1].logp_old = -0.01;
        let b2 = batch(vec![a, vec![rec(-1.0, -1.1, true)]], vec![1.0, 0.0]);
        let cfg = LossConfig::default();
        let adv = [1.0, -1.0];
        let (o1, _) = grpo_arlt_loss(&b1, &adv, &cfg).unwrap();
        let (o2, _) = grpo_arlt_loss(&b2, &adv, &cfg).unwrap();
        assert_eq!(o1.to_bits(), o2.to_bits());
    }

    #[test]
    fn single_turn_matches_when_everything_is_action() {
        let b = batch(
            vec![vec![rec(-0.2, -0.25, true), rec(-0.4, -0.3, true)], vec![rec(-1.0, -0.9, true)]],
            vec![1.0, -1.0],
        );
        let adv = group_advantages(&b.rewards, 1e-6).unwrap();
        let cfg = LossConfig::default();
        let (a, _) = grpo_arlt_loss(&b, &adv, &cfg).unwrap();
        assert_eq!(a, grpo_loss_single_turn(&b, &adv, &cfg).unwrap());
    }

    #[test]
    fn single_turn_differs_once_observations_exist() {
        let b = batch(
            vec![vec![rec(-0.2, -0.25, true), rec(-0.4, -0.1, false)], vec![rec(-1.0, -0.9, true)]],
            vec![1.0, -1.0],
        );
        let adv = [1.0, -1.0];
        let cfg = LossConfig::default();
        let (a, _) = grpo_arlt_loss(&b, &adv, &cfg).unwrap();
        assert_ne!(a, grpo_loss_single_turn(&b, &adv, &cfg).unwrap());
    }

    #[test]
    fn mismatched_columns_are_rejected() {
        let err = TokenRecord::zip(&[TokenId(1), TokenId(2)], &[true], &[0.0, 0.0], &[0.0, 0.0], None).unwrap_err();
        assert_eq!(err, KernelError::MaskMismatch { what: "mask", expected: 2, found: 1 });
    }

    #[test]
    fn advantage_count_must_match() {
        let b = batch(vec![vec![rec(0.0, 0.0, true)]; 2], vec![1.0, 0.0]);
        assert!(matches!(
            grpo_arlt_loss(&b, &[1.0], &LossConfig::default()),
            Err(KernelError::AdvantageMismatch { .. })
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = LossConfig { epsilon_clip: 1.5, ..Default::default() };
        let b = batch(vec![vec![rec(0.0, 0.0, true)]; 2], vec![1.0, 0.0]);
        assert!(matches!(grpo_arlt_loss(&b, &[1.0, -1.0], &cfg), Err(KernelError::InvalidConfig(_))));
    }
}

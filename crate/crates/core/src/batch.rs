//! Loss batches from episode logs.
//!
//! Current-policy log-probabilities come from a sidecar file with one JSON
//! line per trajectory:
//! `{"trajectory_id", "logp_new": [...], "logp_old": [...]?, "logp_ref": [...]?}`.
//! Every list covers all tokens of the flattened trajectory. When `logp_old`
//! is absent the behaviour log-probabilities stored in the episode record
//! are used for action tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{group_advantages, grpo_arlt_loss, GroupBatch, KernelError, LossConfig, TokenRecord};
use crate::rollout::EpisodeRecord;
use crate::trajectory::Origin;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("no log-probabilities for trajectory {0:?}")]
    MissingSidecar(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogprobSidecar {
    pub trajectory_id: String,
    pub logp_new: Vec<f64>,
    #[serde(default)]
    pub logp_old: Option<Vec<f64>>,
    #[serde(default)]
    pub logp_ref: Option<Vec<f64>>,
}

pub fn read_sidecar(path: &Path) -> Result<Vec<LogprobSidecar>, BatchError> {
    let f = std::fs::File::open(path).map_err(|e| BatchError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| BatchError::Parse { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| BatchError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

/// Behaviour log-probabilities laid out per token; observation tokens get 0.
fn recorded_old(rec: &EpisodeRecord) -> Result<Vec<f64>, KernelError> {
    let mut out = Vec::with_capacity(rec.trajectory.token_count());
    let mut actions = rec.action_logprobs.iter();
    for seg in &rec.trajectory.segments {
        match seg.origin {
            Origin::Action => {
                let lp = actions.next().map(Vec::as_slice).unwrap_or(&[]);
                if lp.len() != seg.len() {
                    return Err(KernelError::MaskMismatch { what: "recorded logp_old", expected: seg.len(), found: lp.len() });
                }
                out.extend_from_slice(lp);
            }
            Origin::Observation => out.extend(std::iter::repeat(0.0).take(seg.len())),
        }
    }
    Ok(out)
}

/// Groups records by task, in order of first appearance.
pub fn group_batches(records: &[EpisodeRecord], sidecars: &[LogprobSidecar]) -> Result<Vec<GroupBatch>, BatchError> {
    let by_id: HashMap<&str, &LogprobSidecar> = sidecars.iter().map(|s| (s.trajectory_id.as_str(), s)).collect();
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, GroupBatch> = HashMap::new();
    for rec in records {
        let traj = &rec.trajectory;
        let side = by_id.get(traj.id.as_str()).ok_or_else(|| BatchError::MissingSidecar(traj.id.clone()))?;
        let old = match &side.logp_old {
            Some(o) => o.clone(),
            None => recorded_old(rec)?,
        };
        let tokens = traj.flatten();
        let rows = TokenRecord::zip(&tokens, &traj.action_mask(), &side.logp_new, &old, side.logp_ref.as_deref())?;
        let g = groups.entry(rec.task_id.as_str()).or_insert_with(|| {
            order.push(rec.task_id.as_str());
            GroupBatch { group_id: rec.task_id.clone(), trajectories: Vec::new(), rewards: Vec::new() }
        });
        g.trajectories.push(rows);
        g.rewards.push(rec.reward);
    }
    Ok(order.into_iter().map(|k| groups.remove(k).expect("grouped")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLoss {
    pub group_id: String,
    pub objective: f64,
    pub mean_advantage: f64,
    pub clip_fraction: f64,
    pub masked_tokens: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean of the group objectives.
    pub objective: f64,
    pub clip_fraction: f64,
    pub masked_tokens: usize,
    pub total_tokens: usize,
    pub kl: f64,
    pub groups: Vec<GroupLoss>,
}

pub fn loss_report(batches: &[GroupBatch], cfg: &LossConfig) -> Result<LossReport, KernelError> {
    let mut groups = Vec::with_capacity(batches.len());
    let (mut clipped, mut masked, mut total) = (0.0, 0usize, 0usize);
    for b in batches {
        let adv = group_advantages(&b.rewards, cfg.std_floor)?;
        let (objective, d) = grpo_arlt_loss(b, &adv, cfg)?;
        clipped += d.clip_fraction * d.masked_tokens as f64;
        masked += d.masked_tokens;
        total += d.total_tokens;
        groups.push(GroupLoss {
            group_id: b.group_id.clone(),
            objective,
            mean_advantage: adv.iter().sum::<f64>() / adv.len() as f64,
            clip_fraction: d.clip_fraction,
            masked_tokens: d.masked_tokens,
            kl: d.kl,
        });
    }
    let n = groups.len().max(1) as f64;
    Ok(LossReport {
        objective: groups.iter().map(|g| g.objective).sum::<f64>() / n,
        clip_fraction: if masked == 0 { 0.0 } else { clipped / masked as f64 },
        masked_tokens: masked,
        total_tokens: total,
        kl: groups.iter().map(|g| g.kl).sum::<f64>() / n,
        groups,
    })
}

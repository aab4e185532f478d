//! Masked clipped objective on a two-trajectory group, with its gradient.
//!
//! `cargo run --example grpo_loss`

use toolrl::kernel::{
    group_advantages, grpo_arlt_gradient, grpo_arlt_loss, grpo_loss_single_turn, GroupBatch, LossConfig,
    TokenRecord,
};
use toolrl::trajectory::{Tokenizer, ToyMergeTokenizer, Trajectory};

/// Token rows for a trajectory with made-up log-probabilities.
fn rows(traj: &Trajectory, shift: f64) -> Vec<TokenRecord> {
    let tokens = traj.flatten();
    let n = tokens.len();
    let old: Vec<f64> = (0..n).map(|i| -0.2 - 0.05 * (i % 7) as f64).collect();
    let new: Vec<f64> = old.iter().enumerate().map(|(i, o)| o + shift * ((i % 3) as f64 - 1.0)).collect();
    TokenRecord::zip(&tokens, &traj.action_mask(), &new, &old, None).unwrap()
}

fn main() {
    let tok = ToyMergeTokenizer::default();
    let mut good = Trajectory::new("good");
    good.append_action("<calculator>3947/7</calculator>", &tok).unwrap();
    good.append_observation("563.857142857143", &tok, 64).unwrap();
    good.append_action("<answer>563.9</answer>", &tok).unwrap();
    let mut bad = Trajectory::new("bad");
    bad.append_action("<answer>564</answer>", &tok).unwrap();

    let batch = GroupBatch {
        group_id: "3947/7".into(),
        trajectories: vec![rows(&good, 0.3), rows(&bad, 0.3)],
        rewards: vec![1.0, -1.25],
    };
    let cfg = LossConfig::default();
    let adv = group_advantages(&batch.rewards, cfg.std_floor).unwrap();
    let (objective, diag) = grpo_arlt_loss(&batch, &adv, &cfg).unwrap();
    let unmasked = grpo_loss_single_turn(&batch, &adv, &cfg).unwrap();

    println!("advantages            {adv:?}");
    println!("masked objective      {objective:.6}");
    println!("objective over all    {unmasked:.6}  (observation tokens included)");
    println!(
        "action tokens {} of {}, clipped fraction {:.3}",
        diag.masked_tokens, diag.total_tokens, diag.clip_fraction
    );

    let grad = grpo_arlt_gradient(&batch, &adv, &cfg).unwrap();
    let obs_grad: f64 = grad[0].iter().zip(good.action_mask()).filter(|(_, a)| !a).map(|(g, _)| g.abs()).sum();
    println!("gradient mass on observation tokens: {obs_grad}");
    println!("tokens in the good trajectory: {}", tok.encode(&good.text()).len());
}

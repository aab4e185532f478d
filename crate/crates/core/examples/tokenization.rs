//! Why trajectories are tokenized segment by segment.
//!
//! `cargo run --example tokenization`

use toolrl::trajectory::{Tokenizer, ToyMergeTokenizer, Trajectory};

fn main() {
    let tok = ToyMergeTokenizer::default();
    let action = "<sql>SELECT 1</sql>";
    let observation = "\n0\n1";

    let joint = tok.encode(&format!("{action}{observation}"));
    let mut incremental = tok.encode(action);
    let action_len = incremental.len();
    incremental.extend(tok.encode(observation));

    println!("action tokens:       {:?}", &incremental[..action_len]);
    println!("incremental:         {incremental:?}");
    println!("joint retokenized:   {joint:?}");
    let first_diff = joint.iter().zip(&incremental).position(|(a, b)| a != b);
    println!("first differing position: {first_diff:?}");

    // the trajectory keeps the incremental form, so the action tokens the
    // policy produced are never rewritten by a later observation
    let mut traj = Trajectory::new("demo");
    traj.append_action(action, &tok).unwrap();
    traj.append_observation(observation, &tok, 64).unwrap();
    assert_eq!(traj.flatten(), incremental);
    println!("action mask:         {:?}", traj.action_mask().iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
}

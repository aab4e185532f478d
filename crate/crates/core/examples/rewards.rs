//! The verifiable reward functions and group-normalized advantages.
//!
//! `cargo run --example rewards`

use toolrl::kernel::{
    group_advantages, reward_deepsearch, reward_match, reward_math, reward_swe, reward_visual_reasoner,
    CuriosityParams, NormalizedExact,
};

fn main() {
    let m = NormalizedExact;
    println!("match   hit  {:+}", reward_match("Walker Smith Jr.", " Walker  Smith Jr. ", &m));
    println!("match   miss {:+}", reward_match("Sugar Ray", "Walker Smith Jr.", &m));
    println!("math    hit  {:+}", reward_math("563.9", "563.9", &m));
    println!("math    miss {:+}", reward_math("564", "563.9", &m));
    println!("search  hit with tool    {:+}", reward_deepsearch("a", "a", &m, true));
    println!("search  miss with tool   {:+}", reward_deepsearch("a", "b", &m, true));

    let p = CuriosityParams::default();
    println!("visual  rare tool use    {:+.2}", reward_visual_reasoner(1.0, true, 0.1, 1, p));
    println!("visual  three tool calls {:+.2}", reward_visual_reasoner(1.0, true, 0.3, 3, p));
    println!("swe     tests pass {}   tests fail {}", reward_swe(true, true), reward_swe(true, false));

    let rewards = [1.0, -1.25, 1.0, 1.0, -1.25, 1.0, -1.25, -1.25];
    let adv = group_advantages(&rewards, 1e-6).unwrap();
    println!("\nrewards    {rewards:?}");
    println!("advantages {:?}", adv.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>());
}

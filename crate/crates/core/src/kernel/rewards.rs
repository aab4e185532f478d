//! Verifiable reward functions for each task family.

use std::collections::BTreeMap;

/// Answer matcher. Must be a pure predicate.
pub trait Matcher {
    fn matches(&self, answer: &str, gold: &str) -> bool;
}

impl<F: Fn(&str, &str) -> bool> Matcher for F {
    fn matches(&self, answer: &str, gold: &str) -> bool {
        self(answer, gold)
    }
}

/// Exact match after trimming and collapsing internal whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedExact;

impl Matcher for NormalizedExact {
    fn matches(&self, answer: &str, gold: &str) -> bool {
        normalize_ws(answer) == normalize_ws(gold)
    }
}

pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `1` on match, `-1` otherwise.
pub fn reward_match(answer: &str, gold: &str, matcher: &dyn Matcher) -> f64 {
    if matcher.matches(answer, gold) {
        1.0
    } else {
        -1.0
    }
}

pub const MATH_MISS_PENALTY: f64 = -0.25;

/// Accuracy plus the tool term: `1 + 0` on match, `-1 - 0.25` otherwise.
///
/// The tool term depends only on the match outcome, not on whether a tool
/// was actually used.
pub fn reward_math(answer: &str, gold: &str, matcher: &dyn Matcher) -> f64 {
    let hit = matcher.matches(answer, gold);
    let acc = if hit { 1.0 } else { -1.0 };
    let tool = if hit { 0.0 } else { MATH_MISS_PENALTY };
    acc + tool
}

pub const DEEPSEARCH_TOOL_BONUS: f64 = 0.1;

pub fn reward_deepsearch(answer: &str, gold: &str, matcher: &dyn Matcher, tool_called: bool) -> f64 {
    let bonus = if tool_called { DEEPSEARCH_TOOL_BONUS } else { 0.0 };
    reward_match(answer, gold, matcher) + bonus
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuriosityParams {
    /// Target tool-use rate below which invoking a tool earns a bonus.
    pub h: f64,
    /// Number of tool calls allowed before the penalty starts.
    pub n: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CuriosityParams {
    fn default() -> Self {
        Self { h: 0.3, n: 1.0, alpha: 0.5, beta: 0.05 }
    }
}

/// Accuracy reward plus a curiosity bonus for tool use when the group rarely
/// uses tools, minus a penalty for calling tools more than `n` times.
///
/// `tool_rate` is the fraction of responses in the group that invoke a tool.
pub fn reward_visual_reasoner(
    r_acc: f64,
    invoked_tool: bool,
    tool_rate: f64,
    tool_calls: u32,
    p: CuriosityParams,
) -> f64 {
    let curiosity = if invoked_tool { (p.h - tool_rate).max(0.0) } else { 0.0 };
    let penalty = (p.n - f64::from(tool_calls)).min(0.0);
    r_acc + p.alpha * curiosity + p.beta * penalty
}

/// `1` only when the episode ended normally and every test passed.
pub fn reward_swe(terminated_ok: bool, all_tests_pass: bool) -> f64 {
    if terminated_ok && all_tests_pass {
        1.0
    } else {
        0.0
    }
}

/// Reward with a named breakdown, as stored in episode records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredReward {
    pub total: f64,
    pub breakdown: BTreeMap<String, f64>,
}

impl ScoredReward {
    pub fn single(name: &str, value: f64) -> Self {
        Self { total: value, breakdown: BTreeMap::from([(name.to_owned(), value)]) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_reward() {
        assert_eq!(reward_match("Walker Smith Jr.", "Walker Smith Jr.", &NormalizedExact), 1.0);
        assert_eq!(reward_match("a", "b", &NormalizedExact), -1.0);
        assert_eq!(reward_match(" 563.9 ", "563.9", &NormalizedExact), 1.0);
    }

    #[test]
    fn closures_are_matchers() {
        let ci = |a: &str, g: &str| a.eq_ignore_ascii_case(g);
        assert_eq!(reward_match("ABC", "abc", &ci), 1.0);
    }

    #[test]
    fn math_reward() {
        assert_eq!(reward_math("4", "4", &NormalizedExact), 1.0);
        assert_eq!(reward_math("5", "4", &NormalizedExact), -1.25);
        assert_eq!(reward_math("4", "5", &NormalizedExact), reward_math("5", "4", &NormalizedExact));
    }

    #[test]
    fn deepsearch_reward() {
        let m = NormalizedExact;
        assert!((reward_deepsearch("x", "x", &m, true) - 1.1).abs() < 1e-15);
        assert_eq!(reward_deepsearch("x", "y", &m, false), -1.0);
        assert!((reward_deepsearch("x", "y", &m, true) - (-0.9)).abs() < 1e-15);
    }

    #[test]
    fn visual_reasoner_reward() {
        let p = CuriosityParams::default();
        assert_eq!(reward_visual_reasoner(1.0, true, 0.3, 1, p), 1.0);
        assert!((reward_visual_reasoner(1.0, true, 0.1, 1, p) - 1.1).abs() < 1e-12);
        assert!((reward_visual_reasoner(0.0, false, 0.5, 3, p) - (-0.1)).abs() < 1e-12);
        // no curiosity bonus without a tool call
        assert_eq!(reward_visual_reasoner(1.0, false, 0.0, 0, p), 1.0);
    }

    #[test]
    fn swe_reward() {
        assert_eq!(reward_swe(true, true), 1.0);
        assert_eq!(reward_swe(true, false), 0.0);
        assert_eq!(reward_swe(false, true), 0.0);
    }
}

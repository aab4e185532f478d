//! Multi-turn trajectories of policy actions and tool observations.
//!
//! A trajectory is `a0, o0, a1, o1, ..., an`. Every segment is tokenized on
//! its own and the flattened token list is the concatenation of the
//! per-segment lists, so earlier tokens never change when a turn is appended.
//! Joint retokenization of the concatenated text can disagree at segment
//! boundaries; that form is never stored.

mod stop;
mod tokenizer;

pub use stop::{detect_stop, find_suffix_conflict, StopMatch, StopTokenSet};
pub use tokenizer::{TokenId, Tokenizer, ToyMergeTokenizer, DEFAULT_MERGES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("segments must alternate: cannot append {attempted:?} after {last:?}")]
    AlternationViolation { last: Option<Origin>, attempted: Origin },
    #[error("trajectory {0} is already terminated")]
    Terminated(String),
    #[error("stop token set for {0} is empty")]
    EmptyStopSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Action,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Answer,
    MaxTurns,
    LengthLimit,
    ToolDone,
    Timeout,
    Error,
}

impl TerminationCause {
    /// Causes that count as abnormal episode ends.
    pub fn is_abnormal(self) -> bool {
        matches!(self, Self::Timeout | Self::Error)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub origin: Origin,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub segments: Vec<Segment>,
    pub turn_count: usize,
    pub terminated: bool,
    pub termination_cause: Option<TerminationCause>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            segments: Vec::new(),
            turn_count: 0,
            terminated: false,
            termination_cause: None,
        }
    }

    pub fn last_origin(&self) -> Option<Origin> {
        self.segments.last().map(|s| s.origin)
    }

    pub fn last_action(&self) -> Option<&Segment> {
        self.segments.iter().rev().find(|s| s.origin == Origin::Action)
    }

    fn check_append(&self, attempted: Origin) -> Result<(), TrajectoryError> {
        if self.terminated {
            return Err(TrajectoryError::Terminated(self.id.clone()));
        }
        let last = self.last_origin();
        let ok = match attempted {
            Origin::Action => last != Some(Origin::Action),
            Origin::Observation => last == Some(Origin::Action),
        };
        if ok {
            Ok(())
        } else {
            Err(TrajectoryError::AlternationViolation { last, attempted })
        }
    }

    /// Appends a policy action, tokenized on its own.
    pub fn append_action(
        &mut self,
        action_text: &str,
        tokenizer: &dyn Tokenizer,
    ) -> Result<(), TrajectoryError> {
        self.check_append(Origin::Action)?;
        self.segments.push(Segment {
            origin: Origin::Action,
            text: action_text.to_owned(),
            tokens: tokenizer.encode(action_text),
        });
        Ok(())
    }

    /// Appends a tool observation truncated to `max_obs_tokens` tokens.
    ///
    /// Truncation drops the tail. The stored text is the decode of the kept
    /// tokens, so `tokens == encode(text)` holds for the stored segment.
    pub fn append_observation(
        &mut self,
        obs_text: &str,
        tokenizer: &dyn Tokenizer,
        max_obs_tokens: usize,
    ) -> Result<(), TrajectoryError> {
        self.check_append(Origin::Observation)?;
        let (text, tokens) = truncate_to_tokens(obs_text, tokenizer, max_obs_tokens);
        self.segments.push(Segment { origin: Origin::Observation, text, tokens });
        self.turn_count += 1;
        Ok(())
    }

    pub fn terminate(&mut self, cause: TerminationCause) {
        self.terminated = true;
        self.termination_cause = Some(cause);
    }

    /// Concatenation of the per-segment token lists.
    pub fn flatten(&self) -> Vec<TokenId> {
        self.segments.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    pub fn token_count(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn action_token_count(&self) -> usize {
        self.segments.iter().filter(|s| s.origin == Origin::Action).map(Segment::len).sum()
    }

    /// One flag per flattened token, true for policy-generated tokens.
    pub fn action_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.token_count());
        for seg in &self.segments {
            let bit = seg.origin == Origin::Action;
            mask.extend(std::iter::repeat(bit).take(seg.len()));
        }
        mask
    }

    /// Decoded text of all segments in order.
    pub fn text(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    /// Checks the structural invariants: alternation starting with an
    /// action, turn count, and a final action once terminated normally.
    /// An episode cut short by a timeout or error may end on an observation.
    pub fn is_well_formed(&self) -> bool {
        let alternates = self.segments.iter().enumerate().all(|(i, s)| {
            s.origin == if i % 2 == 0 { Origin::Action } else { Origin::Observation }
        });
        let obs = self.segments.iter().filter(|s| s.origin == Origin::Observation).count();
        let ends_ok = !self.terminated
            || self.segments.is_empty()
            || self.last_origin() == Some(Origin::Action)
            || self.termination_cause.is_some_and(TerminationCause::is_abnormal);
        alternates && obs == self.turn_count && ends_ok
    }
}

/// Truncates `text` to at most `max_tokens` tokens and returns the
/// re-derived `(text, tokens)` pair.
pub fn truncate_to_tokens(
    text: &str,
    tokenizer: &dyn Tokenizer,
    max_tokens: usize,
) -> (String, Vec<TokenId>) {
    let mut tokens = tokenizer.encode(text);
    if tokens.len() <= max_tokens {
        return (text.to_owned(), tokens);
    }
    tokens.truncate(max_tokens);
    loop {
        // back off to a character boundary
        while !tokens.is_empty() && tokenizer.decode_exact(&tokens).is_none() {
            tokens.pop();
        }
        let kept = tokenizer.decode(&tokens);
        let reencoded = tokenizer.encode(&kept);
        if reencoded.len() <= max_tokens {
            return (kept, reencoded);
        }
        tokens = reencoded;
        tokens.truncate(max_tokens);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> ToyMergeTokenizer {
        ToyMergeTokenizer::default()
    }

    #[test]
    fn first_action_on_empty_trajectory() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        traj.append_action("a+b", &t).unwrap();
        assert_eq!(traj.segments.len(), 1);
        assert_eq!(traj.segments[0].tokens, t.encode("a+b"));
    }

    #[test]
    fn appending_keeps_earlier_tokens() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        traj.append_action("x</python>", &t).unwrap();
        traj.append_observation("\n<result>ok</result>", &t, 512).unwrap();
        let before: Vec<_> = traj.segments.iter().map(|s| s.tokens.clone()).collect();
        traj.append_action("done", &t).unwrap();
        assert_eq!(traj.segments.len(), 3);
        for (seg, old) in traj.segments.iter().zip(&before) {
            assert_eq!(&seg.tokens, old);
        }
    }

    #[test]
    fn incremental_differs_from_joint() {
        let t = tok();
        let action = "x</python>";
        let obs = "\n<result>ok</result>";
        let mut traj = Trajectory::new("t");
        traj.append_action(action, &t).unwrap();
        traj.append_observation(obs, &t, 512).unwrap();
        let joint = t.encode(&format!("{action}{obs}"));
        let mut incremental = t.encode(action);
        incremental.extend(t.encode(obs));
        assert_ne!(joint, incremental);
        assert_eq!(traj.flatten(), incremental);
    }

    #[test]
    fn double_action_is_rejected() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        traj.append_action("a", &t).unwrap();
        assert_eq!(
            traj.append_action("b", &t),
            Err(TrajectoryError::AlternationViolation {
                last: Some(Origin::Action),
                attempted: Origin::Action
            })
        );
    }

    #[test]
    fn observation_needs_a_preceding_action() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        assert!(matches!(
            traj.append_observation("o", &t, 10),
            Err(TrajectoryError::AlternationViolation { last: None, .. })
        ));
    }

    #[test]
    fn observation_is_truncated_to_cap() {
        let t = tok();
        // digits never merge, so this is exactly 700 tokens
        let obs: String = (0..700).map(|i| char::from(b'0' + (i % 10) as u8)).collect();
        assert_eq!(t.encode(&obs).len(), 700);
        let mut traj = Trajectory::new("t");
        traj.append_action("q</sql>", &t).unwrap();
        traj.append_observation(&obs, &t, 512).unwrap();
        let seg = &traj.segments[1];
        assert_eq!(seg.len(), 512);
        assert_eq!(t.encode(&seg.text), seg.tokens);
        assert_eq!(seg.text, &obs[..512]);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let t = tok();
        let (text, tokens) = truncate_to_tokens("ééé", &t, 3);
        assert_eq!(text, "é");
        assert_eq!(tokens.len(), 2);
    }

    #[test]
    fn empty_observation_counts_a_turn() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        traj.append_action("q</sql>", &t).unwrap();
        traj.append_observation("", &t, 512).unwrap();
        assert_eq!(traj.turn_count, 1);
        assert!(traj.segments[1].is_empty());
    }

    #[test]
    fn mask_follows_segment_lengths() {
        let mut traj = Trajectory::new("t");
        let seg = |origin, n: u32| Segment { origin, text: String::new(), tokens: (0..n).map(TokenId).collect() };
        traj.segments = vec![seg(Origin::Action, 3), seg(Origin::Observation, 2), seg(Origin::Action, 4)];
        let mask: Vec<u8> = traj.action_mask().into_iter().map(u8::from).collect();
        assert_eq!(mask, vec![1, 1, 1, 0, 0, 1, 1, 1, 1]);
        assert_eq!(traj.action_token_count(), 7);
    }

    #[test]
    fn mask_edge_cases() {
        let t = tok();
        assert!(Trajectory::new("e").action_mask().is_empty());
        let mut traj = Trajectory::new("s");
        traj.append_action("only an answer", &t).unwrap();
        assert!(traj.action_mask().iter().all(|&b| b));
    }

    #[test]
    fn flatten_concatenates_segments() {
        let t = tok();
        let mut traj = Trajectory::new("t");
        traj.append_action("<sql>SELECT 1</sql>", &t).unwrap();
        traj.append_observation("1\n", &t, 64).unwrap();
        let expected: Vec<TokenId> = traj.segments.iter().flat_map(|s| s.tokens.clone()).collect();
        assert_eq!(traj.flatten(), expected);
        assert!(traj.is_well_formed());
    }

    #[test]
    fn serializes_with_snake_case_enums() {
        let t = tok();
        let mut traj = Trajectory::new("t1");
        traj.append_action("hi", &t).unwrap();
        traj.terminate(TerminationCause::MaxTurns);
        let json = serde_json::to_value(&traj).unwrap();
        assert_eq!(json["termination_cause"], "max_turns");
        assert_eq!(json["segments"][0]["origin"], "action");
        let back: Trajectory = serde_json::from_value(json).unwrap();
        assert_eq!(back, traj);
    }
}

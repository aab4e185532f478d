use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::TrajectoryError;

/// Stop strings that route an action to one tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopTokenSet {
    pub tool_id: String,
    pub stop_strings: BTreeSet<String>,
}

impl StopTokenSet {
    pub fn new<I, S>(tool_id: impl Into<String>, stops: I) -> Result<Self, TrajectoryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tool_id = tool_id.into();
        let stop_strings: BTreeSet<String> = stops.into_iter().map(Into::into).collect();
        if stop_strings.is_empty() || stop_strings.iter().any(String::is_empty) {
            return Err(TrajectoryError::EmptyStopSet(tool_id));
        }
        Ok(Self { tool_id, stop_strings })
    }
}

/// A successful stop match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopMatch {
    pub tool_id: String,
    pub stop: String,
}

/// Checks that the union of all stop strings is suffix-free. Returns the
/// first offending `(longer, shorter)` pair.
pub fn find_suffix_conflict<'a>(
    sets: impl IntoIterator<Item = &'a StopTokenSet>,
) -> Option<(String, String)> {
    let all: Vec<&String> = sets.into_iter().flat_map(|s| s.stop_strings.iter()).collect();
    for (i, a) in all.iter().enumerate() {
        for (j, b) in all.iter().enumerate() {
            if i != j && a.ends_with(b.as_str()) {
                return Some(((*a).clone(), (*b).clone()));
            }
        }
    }
    None
}

/// Finds the stop string that `action_text` ends with.
///
/// Matching is on the decoded text suffix. With a suffix-free registry at
/// most one entry can match; on a malformed registry the longest match wins
/// so the result is still deterministic.
pub fn detect_stop(action_text: &str, registry: &[StopTokenSet]) -> Option<StopMatch> {
    registry
        .iter()
        .flat_map(|set| set.stop_strings.iter().map(move |s| (set, s)))
        .filter(|(_, s)| action_text.ends_with(s.as_str()))
        .max_by(|(sa, a), (sb, b)| a.len().cmp(&b.len()).then_with(|| sb.tool_id.cmp(&sa.tool_id)))
        .map(|(set, s)| StopMatch { tool_id: set.tool_id.clone(), stop: s.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> Vec<StopTokenSet> {
        vec![
            StopTokenSet::new("code_interpreter", ["```output", "</python>"]).unwrap(),
            StopTokenSet::new("search", ["</search>"]).unwrap(),
            StopTokenSet::new("sql", ["</sql>"]).unwrap(),
        ]
    }

    #[test]
    fn code_fence_routes_to_interpreter() {
        let m = detect_stop("compute x\n```output", &registry()).unwrap();
        assert_eq!(m.tool_id, "code_interpreter");
        assert_eq!(m.stop, "```output");
    }

    #[test]
    fn search_tag_routes_to_search() {
        let m = detect_stop("who won?</search>", &registry()).unwrap();
        assert_eq!((m.tool_id.as_str(), m.stop.as_str()), ("search", "</search>"));
    }

    #[test]
    fn plain_text_has_no_stop() {
        assert_eq!(detect_stop("the answer is 4", &registry()), None);
        assert_eq!(detect_stop("", &registry()), None);
    }

    #[test]
    fn suffix_conflicts_are_found() {
        let a = StopTokenSet::new("a", ["</x>"]).unwrap();
        let b = StopTokenSet::new("b", ["x>"]).unwrap();
        assert_eq!(find_suffix_conflict([&a, &b]), Some(("</x>".into(), "x>".into())));
        assert_eq!(find_suffix_conflict(registry().iter()), None);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(StopTokenSet::new("t", Vec::<String>::new()).is_err());
        assert!(StopTokenSet::new("t", [""]).is_err());
    }

    proptest! {
        #[test]
        fn routing_ignores_prefix(prefix in "[a-z ]{0,40}", pick in 0usize..4) {
            let stops = ["```output", "</python>", "</search>", "</sql>"];
            let action = format!("q{}", stops[pick]);
            let reg = registry();
            prop_assert_eq!(detect_stop(&action, &reg), detect_stop(&format!("{prefix}{action}"), &reg));
        }

        #[test]
        fn at_most_one_stop_matches(text in "[a-z<>/`]{0,30}(</sql>|</search>|```output|</python>)?") {
            let reg = registry();
            let n = reg.iter().flat_map(|s| s.stop_strings.iter()).filter(|s| text.ends_with(s.as_str())).count();
            prop_assert!(n <= 1);
            prop_assert_eq!(n == 1, detect_stop(&text, &reg).is_some());
        }
    }
}

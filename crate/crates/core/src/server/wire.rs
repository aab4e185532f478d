//! JSON bodies of the HTTP endpoints.
//!
//! `POST /get_observation`
//!
//! ```json
//! {"trajectory_ids": ["t1"], "actions": ["<sql>SELECT 1</sql>"],
//!  "extra_fields": [{"turn": 0}], "finish": [false]}
//! ```
//!
//! answers `{"observations": [...], "valids": [...], "dones": [...]}`.
//! `extra_fields` and `finish` may be omitted; when present they must have
//! one entry per trajectory id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Extra, ToolRequest, ToolResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRequest {
    pub trajectory_ids: Vec<String>,
    pub actions: Vec<String>,
    #[serde(default)]
    pub extra_fields: Vec<Extra>,
    #[serde(default)]
    pub finish: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationResponse {
    pub observations: Vec<String>,
    pub valids: Vec<bool>,
    pub dones: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub tools: Vec<String>,
    /// Stop strings per tool id. Lets clients learn the routing table.
    #[serde(default)]
    pub stop_tokens: BTreeMap<String, Vec<String>>,
}

impl ObservationRequest {
    pub fn from_requests(reqs: &[ToolRequest]) -> Self {
        Self {
            trajectory_ids: reqs.iter().map(|r| r.trajectory_id.clone()).collect(),
            actions: reqs.iter().map(|r| r.action_text.clone()).collect(),
            extra_fields: reqs.iter().map(|r| r.extra.clone()).collect(),
            finish: reqs.iter().map(|r| r.finish).collect(),
        }
    }

    pub fn into_requests(self) -> Result<Vec<ToolRequest>, String> {
        let n = self.trajectory_ids.len();
        if self.actions.len() != n {
            return Err(format!("{} trajectory_ids but {} actions", n, self.actions.len()));
        }
        if !self.extra_fields.is_empty() && self.extra_fields.len() != n {
            return Err(format!("{} trajectory_ids but {} extra_fields", n, self.extra_fields.len()));
        }
        if !self.finish.is_empty() && self.finish.len() != n {
            return Err(format!("{} trajectory_ids but {} finish flags", n, self.finish.len()));
        }
        if self.trajectory_ids.iter().any(String::is_empty) {
            return Err("trajectory ids must be non-empty".into());
        }
        let mut extras = self.extra_fields.into_iter();
        let mut finish = self.finish.into_iter();
        Ok(self
            .trajectory_ids
            .into_iter()
            .zip(self.actions)
            .map(|(trajectory_id, action_text)| ToolRequest {
                trajectory_id,
                action_text,
                extra: extras.next().unwrap_or_default(),
                finish: finish.next().unwrap_or(false),
            })
            .collect())
    }
}

impl ObservationResponse {
    pub fn from_responses(resps: &[ToolResponse]) -> Self {
        Self {
            observations: resps.iter().map(|r| r.observation.clone()).collect(),
            valids: resps.iter().map(|r| r.valid).collect(),
            dones: resps.iter().map(|r| r.done).collect(),
        }
    }

    pub fn into_responses(self) -> Result<Vec<ToolResponse>, String> {
        let n = self.observations.len();
        if self.valids.len() != n || self.dones.len() != n {
            return Err("response arrays differ in length".into());
        }
        Ok(self
            .observations
            .into_iter()
            .zip(self.valids)
            .zip(self.dones)
            .map(|((observation, valid), done)| ToolResponse { observation, valid, done, latency_ms: 0.0, tool_id: None })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn optional_columns_default() {
        let req: ObservationRequest =
            serde_json::from_value(json!({"trajectory_ids": ["a", "b"], "actions": ["x", "y"]})).unwrap();
        let reqs = req.into_requests().unwrap();
        assert_eq!(reqs.len(), 2);
        assert!(!reqs[1].finish && reqs[1].extra.is_empty());
    }

    #[test]
    fn ragged_columns_are_rejected() {
        let req: ObservationRequest = serde_json::from_value(
            json!({"trajectory_ids": ["a", "b"], "actions": ["x", "y"], "finish": [true]}),
        )
        .unwrap();
        assert!(req.into_requests().is_err());
        let req: ObservationRequest =
            serde_json::from_value(json!({"trajectory_ids": [""], "actions": ["x"]})).unwrap();
        assert!(req.into_requests().is_err());
    }

    #[test]
    fn response_field_names() {
        let r = ObservationResponse::from_responses(&[ToolResponse {
            observation: "o".into(),
            valid: true,
            done: false,
            latency_ms: 1.0,
            tool_id: None,
        }]);
        assert_eq!(
            serde_json::to_value(&r).unwrap(),
            json!({"observations": ["o"], "valids": [true], "dones": [false]})
        );
    }
}

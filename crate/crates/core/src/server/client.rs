use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

use super::wire::{Health, ObservationRequest, ObservationResponse};
use super::{ToolRequest, ToolResponse, ToolServer};
use crate::trajectory::StopTokenSet;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("tool server unreachable: {0}")]
    Unreachable(String),
    #[error("tool server protocol error: {0}")]
    Protocol(String),
}

/// What the orchestrator needs from a tool server. Safe to share between
/// rollout tasks.
#[async_trait]
pub trait ToolClient: Send + Sync {
    async fn get_observations(&self, requests: Vec<ToolRequest>) -> Result<Vec<ToolResponse>, ClientError>;

    async fn stop_sets(&self) -> Result<Vec<StopTokenSet>, ClientError>;
}

/// Calls an in-process server directly.
#[derive(Clone)]
pub struct LocalToolClient {
    server: Arc<ToolServer>,
}

impl LocalToolClient {
    pub fn new(server: Arc<ToolServer>) -> Self {
        Self { server }
    }

    pub fn server(&self) -> &Arc<ToolServer> {
        &self.server
    }
}

#[async_trait]
impl ToolClient for LocalToolClient {
    async fn get_observations(&self, requests: Vec<ToolRequest>) -> Result<Vec<ToolResponse>, ClientError> {
        Ok(self.server.handle_batch(requests).await)
    }

    async fn stop_sets(&self) -> Result<Vec<StopTokenSet>, ClientError> {
        Ok(self.server.registry().stop_sets())
    }
}

/// Talks to a server over HTTP.
#[derive(Clone)]
pub struct HttpToolClient {
    base: String,
    http: reqwest::Client,
}

impl HttpToolClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        Ok(Self { base: base_url.into().trim_end_matches('/').to_owned(), http })
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self
            .http
            .get(format!("{}/health", self.base))
            .send()
            .await
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        resp.json().await.map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

#[async_trait]
impl ToolClient for HttpToolClient {
    async fn get_observations(&self, requests: Vec<ToolRequest>) -> Result<Vec<ToolResponse>, ClientError> {
        let body = ObservationRequest::from_requests(&requests);
        let resp = self
            .http
            .post(format!("{}/get_observation", self.base))
            .json(&body)
            .send()
            .await
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            return Err(ClientError::Protocol(format!("{status}: {text}")));
        }
        let parsed: ObservationResponse = resp.json().await.map_err(|e| ClientError::Protocol(e.to_string()))?;
        let out = parsed.into_responses().map_err(ClientError::Protocol)?;
        if out.len() != requests.len() {
            return Err(ClientError::Protocol(format!("sent {} actions, got {} observations", requests.len(), out.len())));
        }
        Ok(out)
    }

    async fn stop_sets(&self) -> Result<Vec<StopTokenSet>, ClientError> {
        let health = self.health().await?;
        health
            .stop_tokens
            .into_iter()
            .map(|(id, stops)| StopTokenSet::new(id, stops).map_err(|e| ClientError::Protocol(e.to_string())))
            .collect()
    }
}

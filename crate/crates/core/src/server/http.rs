//! HTTP front end: `POST /get_observation` and `GET /health`.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use super::wire::{Health, ObservationRequest, ObservationResponse};
use super::ToolServer;

pub fn router(server: Arc<ToolServer>) -> Router {
    Router::new()
        .route("/get_observation", post(get_observation))
        .route("/health", get(health))
        .with_state(server)
}

async fn get_observation(
    State(server): State<Arc<ToolServer>>,
    Json(body): Json<ObservationRequest>,
) -> Result<Json<ObservationResponse>, (StatusCode, String)> {
    let requests = body.into_requests().map_err(|e| (StatusCode::BAD_REQUEST, e))?;
    let responses = server.handle_batch(requests).await;
    Ok(Json(ObservationResponse::from_responses(&responses)))
}

async fn health(State(server): State<Arc<ToolServer>>) -> Json<Health> {
    let registry = server.registry();
    Json(Health {
        status: "ok".into(),
        tools: registry.tool_ids(),
        stop_tokens: registry
            .stop_sets()
            .into_iter()
            .map(|s| (s.tool_id, s.stop_strings.into_iter().collect()))
            .collect(),
    })
}

/// Binds `addr` and serves until `shutdown` resolves. In-flight requests
/// are drained before returning.
pub async fn serve(
    server: Arc<ToolServer>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(server)).with_graceful_shutdown(shutdown).await
}

/// Starts serving on `addr` in a background task. Returns the bound address
/// and a handle that stops the server when dropped or triggered.
pub async fn spawn(server: Arc<ToolServer>, addr: SocketAddr) -> std::io::Result<RunningServer> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let task = tokio::spawn(serve(server, listener, async {
        let _ = rx.await;
    }));
    Ok(RunningServer { addr: local, stop: Some(tx), task })
}

pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        (&mut self.task).await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

//! HTTP API over labeling sessions: the backend a labeling console drives.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | create a session on a prepared dataset |
//! | `GET /sessions/{id}/query` | pending query batch |
//! | `POST /sessions/{id}/label` | answer one pending instance |
//! | `GET /sessions/{id}/curve` | full precision/recall curve |
//! | `GET /sessions/{id}/metrics` | latest point and status |
//! | `GET /healthz` | readiness |
//!
//! Each session is mutated under its own lock on the blocking pool, so a
//! retrain in one session never stalls requests for another.

pub mod error;
pub mod store;

use std::future::Future;
use std::sync::Arc;

use alids_core::dataset::DecodedColumn;
use alids_core::session::{OracleKind, SessionConfig, SessionUpdate};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{json, Value};

pub use error::{ApiError, FieldError};
pub use store::Store;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    #[serde(default)]
    pub config: SessionConfig,
    #[serde(default = "external")]
    pub oracle: OracleKind,
}

fn external() -> OracleKind {
    OracleKind::External
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    pub instance_id: usize,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryItemView {
    pub instance_id: usize,
    pub features: Vec<DecodedColumn>,
    pub vector: Vec<f64>,
    pub posterior: Option<f64>,
    #[serde(serialize_with = "score_or_inf")]
    pub lof_score: Option<f64>,
}

fn score_or_inf<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if !x.is_finite() => s.serialize_str("inf"),
        other => other.serialize(s),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryView {
    pub session_id: String,
    pub status: &'static str,
    pub round: usize,
    pub strategy: String,
    pub items: Vec<QueryItemView>,
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/label", post(submit_label))
        .route("/sessions/{id}/curve", get(curve))
        .route("/sessions/{id}/metrics", get(metrics))
        .fallback(|| async { ApiError::NotFound("route".into()) })
        .with_state(store)
}

/// Serves until `shutdown` resolves, then snapshots every session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let saved = tokio::task::spawn_blocking(move || store.persist_all())
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    tracing::info!("snapshotted {saved} sessions on shutdown");
    Ok(())
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        ApiError::invalid(if field == "." { "body".into() } else { field }, e.inner().to_string())
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn healthz(State(store): State<Arc<Store>>) -> Json<Value> {
    Json(json!({"status": "ok", "sessions": store.len()}))
}

async fn create_session(State(store): State<Arc<Store>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse(&body)?;
    req.config.validate()?;
    let entry = blocking(move || store.create(&req.dataset, req.config, req.oracle)).await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": entry.id}))))
}

fn stopped(status: alids_core::session::SessionStatus) -> ApiError {
    ApiError::Conflict {
        message: format!("session is {}", status.as_str()),
        status: Some(status.as_str()),
    }
}

async fn next_query(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<QueryView>> {
    let entry = store.get(&id)?;
    let view = blocking(move || {
        store.mutate(&entry, |session| {
            let request = match session.next_query() {
                Ok(r) => r,
                Err(alids_core::Error::Stopped(_)) => return Err(stopped(session.status())),
                Err(e) => return Err(e.into()),
            };
            let map = &session.train().encoding_map;
            let items = request
                .items
                .into_iter()
                .map(|item| {
                    Ok(QueryItemView {
                        instance_id: item.id,
                        features: map.decode(&item.features)?,
                        vector: item.features,
                        posterior: item.posterior,
                        lof_score: item.lof_score,
                    })
                })
                .collect::<ApiResult<Vec<_>>>()?;
            Ok(QueryView {
                session_id: session.id.clone(),
                status: session.status().as_str(),
                round: request.round,
                strategy: request.strategy,
                items,
            })
        })
    })
    .await?;
    Ok(Json(view))
}

async fn submit_label(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionUpdate>> {
    let entry = store.get(&id)?;
    let req: LabelRequest = parse(&body)?;
    if req.label > 1 {
        return Err(ApiError::invalid("label", "label must be 0 or 1"));
    }
    let update = blocking(move || {
        store.mutate(&entry, |session| match session.submit_label(req.instance_id, req.label) {
            Err(alids_core::Error::Stopped(_)) => Err(stopped(session.status())),
            other => other.map_err(ApiError::from),
        })
    })
    .await?;
    Ok(Json(update))
}

async fn curve(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = store.get(&id)?;
    let view = entry.view();
    Ok(Json(json!({
        "session_id": entry.id,
        "status": view.status,
        "stop": view.stop,
        "curve": view.curve,
    })))
}

async fn metrics(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = store.get(&id)?;
    let view = entry.view();
    Ok(Json(json!({
        "session_id": entry.id,
        "created_at": entry.created_at,
        "status": view.status,
        "labels_used": view.labels_used,
        "round": view.round,
        "stop": view.stop,
        "latest": view.curve.last(),
    })))
}

/// The service on its own runtime thread, for embedding and tests.
pub struct BackgroundServer {
    pub addr: std::net::SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(addr: &str, store: Arc<Store>) -> std::io::Result<BackgroundServer> {
        let runtime = tokio::runtime::Runtime::new()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, store, async {
                let _ = rx.await;
            }))
        });
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Graceful shutdown; returns once every session has been snapshotted.
    pub fn stop(mut self) -> std::io::Result<()> {
        self.halt()
    }

    fn halt(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| std::io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}

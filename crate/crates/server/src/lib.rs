//! HTTP and WebSocket front end for training sessions.
//!
//! Each session runs in its own task that owns all writes to it; handlers
//! talk to it through a command queue and read the last committed snapshot
//! without waiting. Committed deltas are fanned out to stream subscribers
//! and, with a log directory configured, appended to `<session_id>.jsonl`
//! and flushed before the command is acknowledged.

mod actor;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use thiserror::Error;
use tuftwin_core::session::{ScenarioSpec, SessionError, SessionManager};

pub use actor::{Command, SessionHandle};
pub use routes::router;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Scenarios to load at startup: every `*.json` file in this directory.
    pub scenario_dir: Option<PathBuf>,
    /// Where per-session logs go. No logs are written when unset.
    pub log_dir: Option<PathBuf>,
    /// Advance every running session by one tick at this period.
    pub auto_tick: Option<Duration>,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario {path}: {source}")]
    Scenario { path: PathBuf, source: SessionError },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug)]
pub struct AppState {
    pub manager: SessionManager,
    pub config: ServerConfig,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, ServerError> {
        let state = AppState {
            manager: SessionManager::new(),
            config,
            sessions: RwLock::new(BTreeMap::new()),
        };
        if let Some(dir) = state.config.scenario_dir.clone() {
            for spec in load_scenarios(&dir)? {
                let path = dir.join(format!("{}.json", spec.scenario_id));
                state
                    .manager
                    .add_scenario(spec)
                    .map_err(|source| ServerError::Scenario { path, source })?;
            }
        }
        if let Some(dir) = &state.config.log_dir {
            std::fs::create_dir_all(dir).map_err(|source| ServerError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        Ok(Arc::new(state))
    }

    pub fn create_session(&self, scenario_id: &str) -> Result<SessionHandle, SessionError> {
        let (id, shared) = self.manager.create_session(scenario_id)?;
        let handle = actor::spawn(id.clone(), shared, self.config.log_dir.clone(), self.config.auto_tick)
            .map_err(|e| SessionError::InvalidArgument(format!("cannot open session log: {e}")))?;
        self.sessions.write().unwrap().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }
}

/// Parses every `*.json` file in `dir`, in file-name order.
pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioSpec>, ServerError> {
    let io = |source| ServerError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = std::fs::read_to_string(&path).map_err(|source| ServerError::Io {
                path: path.clone(),
                source,
            })?;
            ScenarioSpec::from_json(&text).map_err(|source| ServerError::Scenario { path, source })
        })
        .collect()
}

/// Binds `addr` and serves until `shutdown` resolves. Session logs are
/// flushed after every command, so they are complete whenever this
/// returns.
pub async fn serve(
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })?;
    serve_on(listener, state, shutdown).await
}

pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    if let Ok(a) = listener.local_addr() {
        tracing::info!("listening on {a}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServerError::Serve)
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

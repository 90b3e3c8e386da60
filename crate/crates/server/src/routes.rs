use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tuftwin_core::session::{ScenarioSpec, SessionError};
use tuftwin_core::twin::{OperatorAction, TwinError};

use crate::actor::Command;
use crate::AppState;

type AppResult<T> = Result<T, ApiError>;

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

fn error_code(e: &SessionError) -> (StatusCode, &'static str) {
    use SessionError::*;
    match e {
        ScenarioInvalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ScenarioInvalid"),
        ScenarioExists(_) => (StatusCode::CONFLICT, "ScenarioExists"),
        UnknownScenario(_) => (StatusCode::NOT_FOUND, "UnknownScenario"),
        UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
        SessionNotRunning(_) => (StatusCode::CONFLICT, "SessionNotRunning"),
        InvalidTransition { .. } => (StatusCode::CONFLICT, "InvalidTransition"),
        SessionStillRunning(_) => (StatusCode::CONFLICT, "SessionStillRunning"),
        InvalidArgument(_) => (StatusCode::BAD_REQUEST, "InvalidArgument"),
        Trace { .. } => (StatusCode::BAD_REQUEST, "Trace"),
        ReplayDiverged { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "ReplayDiverged"),
        Activity(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Activity"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = error_code(&self.0);
        let mut body = json!({ "error": code, "message": self.0.to_string() });
        if let SessionError::ScenarioInvalid(d) = &self.0 {
            body["diagnostics"] = json!(d);
        }
        (status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenarios", get(list_scenarios).post(upload_scenario))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/finish", post(finish))
        .route("/sessions/{id}/abort", post(abort))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/actions", post(action))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/faults", post(inject))
        .route("/sessions/{id}/state", get(state_of))
        .route("/sessions/{id}/debrief", get(debrief))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_scenarios(State(st): State<Arc<AppState>>) -> AppResult<Json<Value>> {
    let mut out = Vec::new();
    for id in st.manager.scenario_ids() {
        let s = st.manager.scenario(&id)?;
        out.push(json!({
            "scenario_id": s.scenario_id,
            "title": s.title,
            "activities": s.activities.iter().map(|a| &a.activity_id).collect::<Vec<_>>(),
        }));
    }
    Ok(Json(Value::Array(out)))
}

#[derive(Deserialize)]
struct UploadQuery {
    #[serde(default)]
    dry_run: bool,
}

async fn upload_scenario(
    State(st): State<Arc<AppState>>,
    Query(q): Query<UploadQuery>,
    body: String,
) -> AppResult<(StatusCode, Json<Value>)> {
    let spec = ScenarioSpec::from_json(&body)?;
    if q.dry_run {
        return Ok((StatusCode::OK, Json(json!({ "scenario_id": spec.scenario_id, "valid": true }))));
    }
    let spec = st.manager.add_scenario(spec)?;
    Ok((StatusCode::CREATED, Json(json!({ "scenario_id": spec.scenario_id, "valid": true }))))
}

async fn get_scenario(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<ScenarioSpec>> {
    Ok(Json((*st.manager.scenario(&id)?).clone()))
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(st.session_ids())
}

#[derive(Deserialize)]
struct CreateSession {
    scenario_id: String,
    #[serde(default)]
    start: bool,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> AppResult<(StatusCode, Json<Value>)> {
    let h = st.create_session(&req.scenario_id)?;
    if req.start {
        h.send(Command::Start).await?;
    }
    let state = h.session.lock().snapshot();
    Ok((StatusCode::CREATED, Json(json!({ "session_id": h.id, "state": state }))))
}

async fn run(st: &AppState, id: &str, cmd: Command) -> AppResult<Response> {
    let delta = st.session(id)?.send(cmd).await?;
    Ok(Json(delta).into_response())
}

async fn start(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    run(&st, &id, Command::Start).await
}

async fn finish(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    run(&st, &id, Command::Finish).await
}

async fn abort(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    run(&st, &id, Command::Abort).await
}

async fn reset(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    run(&st, &id, Command::Reset).await
}

async fn action(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(a): Json<OperatorAction>,
) -> AppResult<Response> {
    run(&st, &id, Command::Action(a)).await
}

#[derive(Deserialize)]
struct Advance {
    ticks: u64,
}

async fn advance(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(a): Json<Advance>,
) -> AppResult<Response> {
    run(&st, &id, Command::Advance(a.ticks)).await
}

async fn inject(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(f): Json<TwinError>,
) -> AppResult<Response> {
    run(&st, &id, Command::Inject(f)).await
}

async fn state_of(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    Ok(Json(st.session(&id)?.snapshot()).into_response())
}

async fn debrief(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    st.session(&id)?;
    let report = tokio::task::spawn_blocking(move || st.manager.debrief(&id))
        .await
        .map_err(|e| SessionError::InvalidArgument(e.to_string()))??;
    Ok(Json(report).into_response())
}

async fn log(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Response> {
    let body = st.session(&id)?.session.lock().log_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn stream(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> AppResult<Response> {
    let rx = st.session(&id)?.subscribe();
    Ok(ws.on_upgrade(move |socket| pump(socket, rx)))
}

async fn pump(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<Arc<str>>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    let note = json!({ "lagged": n }).to_string();
                    if socket.send(Message::Text(note.into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

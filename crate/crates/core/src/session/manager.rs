use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::debrief::{debrief, Debrief};
use super::scenario::ScenarioSpec;
use super::session::{Session, SessionStatus};
use super::SessionError;

pub type SharedSession = Arc<Mutex<Session>>;

/// Registry of scenarios and live sessions. Each session sits behind its
/// own mutex, so commands on different sessions never contend and
/// commands on one session are applied one at a time.
#[derive(Debug, Default)]
pub struct SessionManager {
    scenarios: RwLock<BTreeMap<String, Arc<ScenarioSpec>>>,
    sessions: RwLock<BTreeMap<String, SharedSession>>,
    next_id: AtomicU64,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and registers a scenario. Re-registering an identical
    /// scenario is a no-op.
    pub fn add_scenario(&self, spec: ScenarioSpec) -> Result<Arc<ScenarioSpec>, SessionError> {
        spec.validate()?;
        // Building a session also checks that every error path exists.
        Session::new("probe", Arc::new(spec.clone()))?;
        let mut map = self.scenarios.write();
        if let Some(old) = map.get(&spec.scenario_id) {
            if **old == spec {
                return Ok(old.clone());
            }
            return Err(SessionError::ScenarioExists(spec.scenario_id));
        }
        let spec = Arc::new(spec);
        map.insert(spec.scenario_id.clone(), spec.clone());
        Ok(spec)
    }

    pub fn scenario(&self, id: &str) -> Result<Arc<ScenarioSpec>, SessionError> {
        self.scenarios
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownScenario(id.to_owned()))
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        self.scenarios.read().keys().cloned().collect()
    }

    pub fn create_session(&self, scenario_id: &str) -> Result<(String, SharedSession), SessionError> {
        let spec = self.scenario(scenario_id)?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("s-{n:04}");
        let s = Arc::new(Mutex::new(Session::new(id.clone(), spec)?));
        self.sessions.write().insert(id.clone(), s.clone());
        Ok((id, s))
    }

    pub fn session(&self, id: &str) -> Result<SharedSession, SessionError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    /// Runs `f` with exclusive access to one session.
    pub fn with_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<R, SessionError>,
    ) -> Result<R, SessionError> {
        let s = self.session(id)?;
        let mut guard = s.lock();
        f(&mut guard)
    }

    pub fn debrief(&self, id: &str) -> Result<Debrief, SessionError> {
        let (scenario, log, status) =
            self.with_session(id, |s| Ok((s.scenario().clone(), s.log().to_vec(), s.status())))?;
        if matches!(status, SessionStatus::Created | SessionStatus::Running) {
            return Err(SessionError::SessionStillRunning(status));
        }
        debrief(id, scenario, &log)
    }
}

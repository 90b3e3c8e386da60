use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tuftwin_core::session::{
    SessionError, SessionSnapshot, SessionStatus, SharedSession, StateDelta,
};
use tuftwin_core::twin::{OperatorAction, TwinError};

#[derive(Debug)]
pub enum Command {
    Start,
    Finish,
    Abort,
    Action(OperatorAction),
    Advance(u64),
    Reset,
    Inject(TwinError),
}

type Reply = oneshot::Sender<Result<StateDelta, SessionError>>;

/// Client side of a session actor. The actor is the only writer of its
/// session; every mutation is a queued [`Command`].
#[derive(Debug, Clone)]
pub struct SessionHandle {
    pub id: String,
    pub session: SharedSession,
    tx: mpsc::Sender<(Command, Reply)>,
    updates: broadcast::Sender<Arc<str>>,
    snapshot: watch::Receiver<SessionSnapshot>,
}

impl SessionHandle {
    pub async fn send(&self, cmd: Command) -> Result<StateDelta, SessionError> {
        let (reply, rx) = oneshot::channel();
        if self.tx.send((cmd, reply)).await.is_err() {
            return Err(SessionError::UnknownSession(self.id.clone()));
        }
        rx.await
            .unwrap_or_else(|_| Err(SessionError::UnknownSession(self.id.clone())))
    }

    /// Latest committed snapshot; never waits for the queue.
    pub fn snapshot(&self) -> SessionSnapshot {
        self.snapshot.borrow().clone()
    }

    /// Serialized deltas of every command committed after subscribing.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.updates.subscribe()
    }
}

struct LogFile {
    out: BufWriter<File>,
    written: usize,
}

impl LogFile {
    fn create(path: PathBuf, session: &SharedSession) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let s = session.lock();
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let meta = json!({ "meta": {
            "session_id": s.id(),
            "scenario_id": s.scenario().scenario_id,
            "created_unix_ms": started,
        }});
        writeln!(out, "{meta}")?;
        out.flush()?;
        Ok(LogFile { out, written: 0 })
    }

    /// Appends records not yet on disk and flushes.
    fn sync(&mut self, session: &SharedSession) -> std::io::Result<()> {
        let s = session.lock();
        for r in &s.log()[self.written..] {
            writeln!(self.out, "{}", r.to_json_line())?;
        }
        self.written = s.log().len();
        self.out.flush()
    }
}

pub fn spawn(
    id: String,
    session: SharedSession,
    log_dir: Option<PathBuf>,
    auto_tick: Option<Duration>,
) -> std::io::Result<SessionHandle> {
    let mut log = match &log_dir {
        Some(dir) => Some(LogFile::create(dir.join(format!("{id}.jsonl")), &session)?),
        None => None,
    };
    let (tx, mut rx) = mpsc::channel::<(Command, Reply)>(64);
    let (updates, _) = broadcast::channel(256);
    let (snap_tx, snapshot) = watch::channel(session.lock().snapshot());
    let handle = SessionHandle {
        id: id.clone(),
        session: session.clone(),
        tx,
        updates: updates.clone(),
        snapshot,
    };

    tokio::spawn(async move {
        let mut ticker = auto_tick.map(|p| {
            let mut i = tokio::time::interval(p);
            i.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            i
        });
        loop {
            let (cmd, reply) = tokio::select! {
                msg = rx.recv() => match msg {
                    Some((cmd, reply)) => (cmd, Some(reply)),
                    None => break,
                },
                _ = async { ticker.as_mut().unwrap().tick().await }, if ticker.is_some() => {
                    if session.lock().status() != SessionStatus::Running {
                        continue;
                    }
                    (Command::Advance(1), None)
                }
            };
            let result = {
                let mut s = session.lock();
                match cmd {
                    Command::Start => s.start(),
                    Command::Finish => s.finish(),
                    Command::Abort => s.abort(),
                    Command::Action(a) => s.post_action(a),
                    Command::Advance(n) => s.advance(n),
                    Command::Reset => s.reset_interlock(),
                    Command::Inject(f) => s.inject_fault(f),
                }
            };
            if let Some(log) = &mut log {
                if let Err(e) = log.sync(&session) {
                    tracing::error!(session = %id, "writing session log failed: {e}");
                }
            }
            if let Ok(delta) = &result {
                let text: Arc<str> = serde_json::to_string(delta)
                    .expect("deltas always serialize")
                    .into();
                let _ = updates.send(text);
                let _ = snap_tx.send(session.lock().snapshot());
            }
            if let Some(reply) = reply {
                let _ = reply.send(result);
            }
        }
    });
    Ok(handle)
}

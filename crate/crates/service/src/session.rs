//! Session state and its on-disk snapshot form.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use xqd_core::codec;
use xqd_core::fitting::{FitReport, SingularPoints};
use xqd_core::{GridSpec, Mark, XqdModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitState {
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct FitJob {
    pub state: FitState,
    pub report: Option<FitReport>,
    pub error: Option<String>,
}

impl Default for FitJob {
    fn default() -> Self {
        FitJob {
            state: FitState::Idle,
            report: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub image: Option<Vec<u8>>,
    pub grid: GridSpec,
    pub cores: Vec<(f64, f64)>,
    pub deltas: Vec<(f64, f64)>,
    pub marks: Vec<Mark>,
    pub model: Option<XqdModel>,
    /// Revision the model was fit against.
    pub model_revision: u64,
    pub revision: u64,
    pub fit: FitJob,
}

impl Session {
    pub fn new(id: String, grid: GridSpec, image: Option<Vec<u8>>) -> Self {
        Session {
            id,
            image,
            grid,
            cores: Vec::new(),
            deltas: Vec::new(),
            marks: Vec::new(),
            model: None,
            model_revision: 0,
            revision: 0,
            fit: FitJob::default(),
        }
    }

    pub fn stale(&self) -> bool {
        self.model.is_some() && self.model_revision != self.revision
    }

    pub fn singular(&self) -> SingularPoints {
        SingularPoints::new(self.cores.clone(), self.deltas.clone())
    }

    /// Records a mutation of the marking data.
    pub fn touch(&mut self) {
        self.revision += 1;
    }
}

pub type SessionHandle = Arc<tokio::sync::RwLock<Session>>;

#[derive(Default)]
pub struct AppState {
    pub(crate) sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(AppState::default())
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
    }

    pub fn insert(&self, session: Session) -> SessionHandle {
        let id = session.id.clone();
        let handle = Arc::new(tokio::sync::RwLock::new(session));
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id, handle.clone());
        handle
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serializable copy of every session. Fits in progress are recorded as
    /// idle.
    pub async fn snapshot(&self) -> Snapshot {
        let handles: Vec<SessionHandle> = self
            .sessions
            .read()
            .expect("session map lock")
            .values()
            .cloned()
            .collect();
        let mut sessions = Vec::with_capacity(handles.len());
        for h in handles {
            let s = h.read().await;
            sessions.push(SessionSnapshot::of(&s));
        }
        sessions.sort_by(|a, b| a.id.cmp(&b.id));
        Snapshot { sessions }
    }

    pub fn restore(snapshot: &Snapshot) -> Result<Arc<Self>, String> {
        let state = AppState::new();
        for s in &snapshot.sessions {
            state.insert(s.to_session()?);
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sessions: Vec<SessionSnapshot>,
}

/// One session as JSON, with the model embedded as base64 `.xqd` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub cols: usize,
    pub rows: usize,
    pub spacing_px: u32,
    pub image: Option<String>,
    pub cores: Vec<(f64, f64)>,
    pub deltas: Vec<(f64, f64)>,
    /// `(x, y, theta)` with theta in radians.
    pub marks: Vec<(f64, f64, f64)>,
    pub model_xqd: Option<String>,
    pub model_revision: u64,
    pub revision: u64,
}

impl SessionSnapshot {
    fn of(s: &Session) -> Self {
        SessionSnapshot {
            id: s.id.clone(),
            cols: s.grid.cols,
            rows: s.grid.rows,
            spacing_px: s.grid.spacing_px,
            image: s.image.as_ref().map(|b| B64.encode(b)),
            cores: s.cores.clone(),
            deltas: s.deltas.clone(),
            marks: s.marks.iter().map(|m| (m.x, m.y, m.theta)).collect(),
            model_xqd: s
                .model
                .as_ref()
                .and_then(|m| codec::encode(m).ok())
                .map(|b| B64.encode(b)),
            model_revision: s.model_revision,
            revision: s.revision,
        }
    }

    fn to_session(&self) -> Result<Session, String> {
        let grid =
            GridSpec::new(self.cols, self.rows, self.spacing_px).map_err(|e| e.to_string())?;
        let image = match &self.image {
            Some(s) => Some(B64.decode(s).map_err(|e| e.to_string())?),
            None => None,
        };
        let model = match &self.model_xqd {
            Some(s) => {
                let bytes = B64.decode(s).map_err(|e| e.to_string())?;
                Some(codec::decode(&bytes).map_err(|e| e.to_string())?)
            }
            None => None,
        };
        let marks = self
            .marks
            .iter()
            .map(|&(x, y, t)| Mark::new(x, y, t).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok(Session {
            id: self.id.clone(),
            image,
            grid,
            cores: self.cores.clone(),
            deltas: self.deltas.clone(),
            marks,
            model,
            model_revision: self.model_revision,
            revision: self.revision,
            fit: FitJob::default(),
        })
    }
}

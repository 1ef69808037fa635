//! REST service for tutoring sessions.
//!
//! Every session is backed by an append-only JSONL event log; each 2xx
//! response's events are synced to disk before the response is sent, and a
//! restarted service rebuilds sessions lazily by replaying their logs.

mod api;
pub mod events;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;
use tutorbot_core::corpus::{read_curricula, CURRICULA_FILE};
use tutorbot_core::{Curriculum, Engine, EngineConfig, EngineError, Model, SessionState};

pub use api::{router, ErrorBody};
use events::EventLog;

pub const DEFAULT_PORT: u16 = 8080;
pub const ENV_PORT: &str = "TUTORBOT_PORT";
pub const ENV_DATA_DIR: &str = "TUTORBOT_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub port: u16,
    /// Holds `curricula.jsonl` and the `sessions/` event logs.
    pub data_dir: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
    /// Idle sessions beyond this count are dropped from memory; they are
    /// replayed from disk on next access.
    pub max_sessions_in_memory: usize,
    /// Allowed CORS origins; `*` allows any.
    pub cors_allowlist: Vec<String>,
    /// Console assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("data"),
            checkpoint_path: None,
            max_sessions_in_memory: 1024,
            cors_allowlist: Vec::new(),
            static_dir: None,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Applies `TUTORBOT_PORT` and `TUTORBOT_DATA_DIR` when set.
    pub fn with_env(mut self) -> Result<Self, ServiceError> {
        if let Ok(port) = std::env::var(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}={port:?} is not a port")))?;
        }
        if let Ok(dir) = std::env::var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("event log: {0}")]
    Log(String),
    #[error(transparent)]
    Corpus(#[from] tutorbot_core::corpus::CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub(crate) struct SessionEntry {
    pub state: SessionState,
    pub next_seq: u64,
}

pub(crate) type SharedEntry = Arc<AsyncMutex<SessionEntry>>;

/// Shared service state: the read-only engine, curricula and live sessions.
pub struct AppState {
    pub(crate) engine: Option<Arc<Engine<Arc<Model>>>>,
    pub(crate) curricula: BTreeMap<String, Curriculum>,
    pub(crate) sessions: Mutex<HashMap<String, SharedEntry>>,
    pub(crate) log: EventLog,
    pub(crate) config: ServiceConfig,
}

impl AppState {
    /// Opens the data directory. Without a model, session routes answer 503.
    pub fn new(config: ServiceConfig, model: Option<Model>) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&config.data_dir).map_err(|e| ServiceError::io(&config.data_dir, e))?;
        let curricula_path = config.data_dir.join(CURRICULA_FILE);
        let curricula = if curricula_path.is_file() {
            read_curricula(&config.data_dir)?
                .into_iter()
                .map(|c| (c.id.clone(), c))
                .collect()
        } else {
            log::warn!("no curricula at {}", curricula_path.display());
            BTreeMap::new()
        };
        let engine = match model {
            Some(m) => Some(Arc::new(Engine::new(Arc::new(m), config.engine.clone())?)),
            None => None,
        };
        Ok(Self {
            engine,
            curricula,
            sessions: Mutex::new(HashMap::new()),
            log: EventLog::open(config.data_dir.join("sessions"))?,
            config,
        })
    }

    pub fn curricula(&self) -> impl Iterator<Item = &Curriculum> {
        self.curricula.values()
    }

    /// Live session, or one replayed from its log. `None` if unknown.
    pub(crate) fn session(&self, id: &str) -> Result<Option<SharedEntry>, ServiceError> {
        if let Some(entry) = self.sessions.lock().unwrap().get(id) {
            return Ok(Some(entry.clone()));
        }
        if !valid_session_id(id) || !self.log.exists(id) {
            return Ok(None);
        }
        let (state, next_seq) = events::replay(&self.log.recover(id)?)?;
        let mut sessions = self.sessions.lock().unwrap();
        let entry = sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(AsyncMutex::new(SessionEntry { state, next_seq })))
            .clone();
        Ok(Some(entry))
    }

    pub(crate) fn insert(&self, id: String, entry: SessionEntry) {
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.len() >= self.config.max_sessions_in_memory {
            // idle entries are only referenced by the map
            sessions.retain(|_, e| Arc::strong_count(e) > 1);
        }
        sessions.insert(id, Arc::new(AsyncMutex::new(entry)));
    }
}

pub(crate) fn new_session_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

fn valid_session_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Binds and serves until interrupted. Requests in flight finish (and their
/// events are synced) before the process exits.
pub async fn serve(config: ServiceConfig, model: Option<Model>) -> Result<(), ServiceError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let state = Arc::new(AppState::new(config, model)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    let local = listener.local_addr().unwrap_or(addr);
    log::info!("listening on http://{local}");
    eprintln!("tutorbot service listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(|e| ServiceError::io(Path::new("<server>"), e))
}

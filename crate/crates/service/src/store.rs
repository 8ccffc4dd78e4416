//! Session registry, prepared datasets and on-disk session snapshots.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use alids_core::dataset::{self, EncodedDataset, EncodedSnapshot, SplitManifest};
use alids_core::session::{CurvePoint, OracleKind, Session, SessionConfig, SessionStatus, StopRule};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::ApiError;

pub const ENCODED_FILE: &str = "encoded.json";
pub const SPLIT_FILE: &str = "split.json";

/// Read-side copy of a session, refreshed after every mutation so curve and
/// metrics requests never wait on a retrain.
#[derive(Debug, Clone, Serialize)]
pub struct View {
    pub status: SessionStatus,
    pub labels_used: usize,
    pub round: usize,
    pub stop: StopRule,
    pub curve: Vec<CurvePoint>,
}

impl View {
    fn of(session: &Session) -> Self {
        View {
            status: session.status(),
            labels_used: session.labels_used(),
            round: session.round(),
            stop: session.config().stop.clone(),
            curve: session.curve().to_vec(),
        }
    }
}

pub struct Entry {
    pub id: String,
    pub created_at: u64,
    session: Mutex<Session>,
    view: RwLock<View>,
}

impl Entry {
    fn new(session: Session, created_at: u64) -> Self {
        Entry {
            id: session.id.clone(),
            created_at,
            view: RwLock::new(View::of(&session)),
            session: Mutex::new(session),
        }
    }

    pub fn view(&self) -> View {
        self.view.read().expect("view lock poisoned").clone()
    }
}

#[derive(Serialize, Deserialize)]
struct StoredSession<'a> {
    created_at: u64,
    #[serde(borrow)]
    session: &'a RawValue,
}

pub struct Store {
    data_dir: PathBuf,
    snapshot_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Store {
    /// Opens the store and resumes every session snapshot found in `snapshot_dir`.
    pub fn open(data_dir: impl Into<PathBuf>, snapshot_dir: Option<PathBuf>) -> io::Result<Store> {
        let store = Store {
            data_dir: data_dir.into(),
            snapshot_dir,
            sessions: RwLock::new(HashMap::new()),
        };
        if let Some(dir) = &store.snapshot_dir {
            fs::create_dir_all(dir)?;
            let mut sessions = store.sessions.write().expect("sessions lock poisoned");
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                match load_snapshot(&path) {
                    Ok(e) => {
                        sessions.insert(e.id.clone(), Arc::new(e));
                    }
                    Err(err) => tracing::warn!("skipping snapshot {}: {err}", path.display()),
                }
            }
            tracing::info!("resumed {} sessions from {}", sessions.len(), dir.display());
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("sessions lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }

    /// Train and test splits of a prepared dataset directory.
    pub fn dataset(&self, name: &str) -> Result<(EncodedDataset, EncodedDataset), ApiError> {
        if !valid_name(name) {
            return Err(ApiError::NotFound(format!("dataset {name:?}")));
        }
        let dir = self.data_dir.join(name);
        if !dir.join(ENCODED_FILE).is_file() || !dir.join(SPLIT_FILE).is_file() {
            return Err(ApiError::NotFound(format!("dataset {name:?}")));
        }
        let snapshot = EncodedSnapshot::load(dir.join(ENCODED_FILE))?;
        let data = snapshot
            .dataset()
            .ok_or_else(|| ApiError::Internal(format!("dataset {name:?} has no cached matrix")))?;
        let text = fs::read_to_string(dir.join(SPLIT_FILE)).map_err(|e| ApiError::Internal(e.to_string()))?;
        let manifest: SplitManifest = serde_json::from_str(&text).map_err(|e| ApiError::Internal(e.to_string()))?;
        let split = dataset::materialize(&data, &manifest)?;
        Ok((split.train, split.test))
    }

    pub fn create(&self, dataset: &str, config: SessionConfig, oracle: OracleKind) -> Result<Arc<Entry>, ApiError> {
        let (train, test) = self.dataset(dataset)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::init(train, test, config, oracle)?.with_id(id.clone());
        let entry = Arc::new(Entry::new(session, now()));
        {
            let session = entry.session.lock().expect("session lock poisoned");
            self.persist(&entry, &session)?;
        }
        self.sessions
            .write()
            .expect("sessions lock poisoned")
            .insert(id, entry.clone());
        Ok(entry)
    }

    /// Runs `f` with exclusive access to the session, then refreshes the
    /// read view and the on-disk snapshot.
    pub fn mutate<T>(&self, entry: &Entry, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut session = entry.session.lock().expect("session lock poisoned");
        let fingerprint = |s: &Session| (s.status(), s.labels_used(), s.pending().map(|p| p.ids()));
        let before = fingerprint(&session);
        let result = f(&mut session);
        if fingerprint(&session) != before {
            *entry.view.write().expect("view lock poisoned") = View::of(&session);
            self.persist(entry, &session)?;
        }
        result
    }

    fn persist(&self, entry: &Entry, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(());
        };
        let bytes = session.snapshot()?;
        let raw: &RawValue = serde_json::from_slice(&bytes).map_err(|e| ApiError::Internal(e.to_string()))?;
        let stored = serde_json::to_vec(&StoredSession {
            created_at: entry.created_at,
            session: raw,
        })
        .map_err(|e| ApiError::Internal(e.to_string()))?;
        write_atomic(&dir.join(format!("{}.json", entry.id)), &stored).map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// Writes every session's snapshot; used on shutdown.
    pub fn persist_all(&self) -> Result<usize, ApiError> {
        let entries: Vec<Arc<Entry>> = self.sessions.read().expect("sessions lock poisoned").values().cloned().collect();
        for entry in &entries {
            let session = entry.session.lock().expect("session lock poisoned");
            self.persist(entry, &session)?;
        }
        Ok(entries.len())
    }
}

fn load_snapshot(path: &Path) -> Result<Entry, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let stored: StoredSession = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let session = Session::restore(stored.session.get().as_bytes()).map_err(|e| e.to_string())?;
    Ok(Entry::new(session, stored.created_at))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

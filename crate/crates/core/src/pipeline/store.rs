//! Session persistence: a header, an append-only event log and named assets
//! per session.
//!
//! On disk each session is a directory `<root>/<id>/` holding
//! `session.json`, `events.ndjson` and its assets; `<root>/index.json`
//! lists the sessions.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::events::{parse_event_log, SessionEvent};
use super::session::SessionHeader;
use super::PipelineError;

pub const HEADER_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.ndjson";
pub const INDEX_FILE: &str = "index.json";

pub trait SessionStore: Send + Sync {
    /// Fails with `IdCollision` if the id exists.
    fn create(&self, header: &SessionHeader) -> Result<(), PipelineError>;
    fn load(&self, id: &str) -> Result<(SessionHeader, Vec<SessionEvent>), PipelineError>;
    /// Durable once this returns.
    fn append(&self, id: &str, event: &SessionEvent) -> Result<(), PipelineError>;
    fn put_asset(&self, id: &str, name: &str, bytes: &[u8]) -> Result<(), PipelineError>;
    fn get_asset(&self, id: &str, name: &str) -> Result<Vec<u8>, PipelineError>;
    fn list(&self) -> Result<Vec<String>, PipelineError>;
}

/// Ids and asset names become path components, so only a conservative
/// alphabet is accepted.
pub fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

fn check_asset_name(name: &str) -> Result<(), PipelineError> {
    if !is_safe_name(name) || name == HEADER_FILE || name == EVENTS_FILE {
        return Err(PipelineError::AssetNotFound(name.to_string()));
    }
    Ok(())
}

fn io_err(context: &str, e: io::Error) -> PipelineError {
    PipelineError::Store(format!("{context}: {e}"))
}

#[derive(Debug, Default)]
struct MemorySession {
    header: Option<SessionHeader>,
    events: Vec<SessionEvent>,
    assets: HashMap<String, Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<BTreeMap<String, MemorySession>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn create(&self, header: &SessionHeader) -> Result<(), PipelineError> {
        let mut map = self.sessions.lock().expect("store lock");
        if map.contains_key(&header.session_id) {
            return Err(PipelineError::IdCollision(header.session_id.clone()));
        }
        map.insert(
            header.session_id.clone(),
            MemorySession {
                header: Some(header.clone()),
                ..Default::default()
            },
        );
        Ok(())
    }

    fn load(&self, id: &str) -> Result<(SessionHeader, Vec<SessionEvent>), PipelineError> {
        let map = self.sessions.lock().expect("store lock");
        let s = map.get(id).ok_or_else(|| PipelineError::UnknownSession(id.to_string()))?;
        Ok((s.header.clone().expect("created with header"), s.events.clone()))
    }

    fn append(&self, id: &str, event: &SessionEvent) -> Result<(), PipelineError> {
        let mut map = self.sessions.lock().expect("store lock");
        let s = map.get_mut(id).ok_or_else(|| PipelineError::UnknownSession(id.to_string()))?;
        s.events.push(event.clone());
        Ok(())
    }

    fn put_asset(&self, id: &str, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        check_asset_name(name)?;
        let mut map = self.sessions.lock().expect("store lock");
        let s = map.get_mut(id).ok_or_else(|| PipelineError::UnknownSession(id.to_string()))?;
        s.assets.insert(name.to_string(), bytes.to_vec());
        Ok(())
    }

    fn get_asset(&self, id: &str, name: &str) -> Result<Vec<u8>, PipelineError> {
        check_asset_name(name)?;
        let map = self.sessions.lock().expect("store lock");
        let s = map.get(id).ok_or_else(|| PipelineError::UnknownSession(id.to_string()))?;
        s.assets
            .get(name)
            .cloned()
            .ok_or_else(|| PipelineError::AssetNotFound(name.to_string()))
    }

    fn list(&self) -> Result<Vec<String>, PipelineError> {
        Ok(self.sessions.lock().expect("store lock").keys().cloned().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub patient_ref: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionIndex {
    pub sessions: BTreeMap<String, IndexEntry>,
}

#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    index: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root.display().to_string(), e))?;
        Ok(Self {
            root,
            index: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, PipelineError> {
        if !is_safe_name(id) {
            return Err(PipelineError::UnknownSession(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    fn existing_dir(&self, id: &str) -> Result<PathBuf, PipelineError> {
        let dir = self.session_dir(id)?;
        if !dir.join(HEADER_FILE).is_file() {
            return Err(PipelineError::UnknownSession(id.to_string()));
        }
        Ok(dir)
    }

    pub fn read_index(&self) -> Result<SessionIndex, PipelineError> {
        let path = self.root.join(INDEX_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| PipelineError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(SessionIndex::default()),
            Err(e) => Err(io_err(&path.display().to_string(), e)),
        }
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        let tmp = path.with_extension("tmp");
        let ctx = path.display().to_string();
        let mut f = File::create(&tmp).map_err(|e| io_err(&ctx, e))?;
        f.write_all(bytes).map_err(|e| io_err(&ctx, e))?;
        f.sync_all().map_err(|e| io_err(&ctx, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(&ctx, e))
    }
}

impl SessionStore for FileStore {
    fn create(&self, header: &SessionHeader) -> Result<(), PipelineError> {
        let _guard = self.index.lock().expect("index lock");
        let dir = self.session_dir(&header.session_id)?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(PipelineError::IdCollision(header.session_id.clone()))
            }
            Err(e) => return Err(io_err(&dir.display().to_string(), e)),
        }
        let json = serde_json::to_vec_pretty(header).expect("headers serialize");
        Self::write_atomic(&dir.join(HEADER_FILE), &json)?;
        File::create(dir.join(EVENTS_FILE)).map_err(|e| io_err(EVENTS_FILE, e))?;
        let mut index = self.read_index()?;
        index.sessions.insert(
            header.session_id.clone(),
            IndexEntry {
                patient_ref: header.patient_ref.clone(),
                created_at: header.created_at,
            },
        );
        let json = serde_json::to_vec_pretty(&index).expect("index serializes");
        Self::write_atomic(&self.root.join(INDEX_FILE), &json)
    }

    fn load(&self, id: &str) -> Result<(SessionHeader, Vec<SessionEvent>), PipelineError> {
        let dir = self.existing_dir(id)?;
        let header_path = dir.join(HEADER_FILE);
        let text = fs::read_to_string(&header_path).map_err(|e| io_err(HEADER_FILE, e))?;
        let header: SessionHeader = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Store(format!("{}: {e}", header_path.display())))?;
        let log = match fs::read_to_string(dir.join(EVENTS_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(EVENTS_FILE, e)),
        };
        Ok((header, parse_event_log(&log)?))
    }

    fn append(&self, id: &str, event: &SessionEvent) -> Result<(), PipelineError> {
        let dir = self.existing_dir(id)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(EVENTS_FILE))
            .map_err(|e| io_err(EVENTS_FILE, e))?;
        let mut line = event.to_line();
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| io_err(EVENTS_FILE, e))?;
        f.sync_data().map_err(|e| io_err(EVENTS_FILE, e))
    }

    fn put_asset(&self, id: &str, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        check_asset_name(name)?;
        let dir = self.existing_dir(id)?;
        Self::write_atomic(&dir.join(name), bytes)
    }

    fn get_asset(&self, id: &str, name: &str) -> Result<Vec<u8>, PipelineError> {
        check_asset_name(name)?;
        let dir = self.existing_dir(id)?;
        match fs::read(dir.join(name)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(PipelineError::AssetNotFound(name.to_string())),
            Err(e) => Err(io_err(name, e)),
        }
    }

    fn list(&self) -> Result<Vec<String>, PipelineError> {
        Ok(self.read_index()?.sessions.into_keys().collect())
    }
}

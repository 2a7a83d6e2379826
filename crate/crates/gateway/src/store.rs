//! On-disk session store.
//!
//! ```text
//! <root>/<id>/config.json     engine config snapshot
//! <root>/<id>/patterns.json   pattern library snapshot
//! <root>/<id>/events.jsonl    append-only log, closed by an `end` record
//! <root>/<id>/frames.csv      frame dump
//! <root>/<id>/paths/NNNN.json drawn paths, stored as received
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tactvest_analytics::log::{read_log, LogError, LogRecord};
use tactvest_core::frame::{csv_header, push_csv_row};
use tactvest_core::library::LibraryError;
use tactvest_core::{MotorFrame, PatternLibrary};

use crate::engine::EngineConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const PATTERNS_FILE: &str = "patterns.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const FRAMES_FILE: &str = "frames.csv";
pub const PATHS_DIR: &str = "paths";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already exists")]
    Exists(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {0:?} is not complete")]
    Incomplete(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub id: String,
    pub created_unix: u64,
    pub engine: EngineConfig,
    #[serde(default)]
    pub participant: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StoredSession {
    pub config: SessionConfig,
    pub library: PatternLibrary,
    pub records: Vec<LogRecord>,
    pub dir: PathBuf,
}

impl StoredSession {
    pub fn is_complete(&self) -> bool {
        matches!(self.records.last(), Some(LogRecord::End { .. }))
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        let dir = self.root.join(id);
        if !dir.join(CONFIG_FILE).is_file() {
            return Err(StoreError::UnknownSession(id.to_string()));
        }
        Ok(dir)
    }

    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(CONFIG_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Create a session directory and open its writer. Without an explicit
    /// id one is derived from the clock.
    pub fn create(
        &self,
        id: Option<&str>,
        engine: EngineConfig,
        library: &PatternLibrary,
        participant: Option<String>,
    ) -> Result<SessionWriter, StoreError> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let (id, dir) = match id {
            Some(id) => {
                if !valid_id(id) {
                    return Err(StoreError::InvalidId(id.to_string()));
                }
                let dir = self.root.join(id);
                fs::create_dir(&dir).map_err(|e| match e.kind() {
                    std::io::ErrorKind::AlreadyExists => StoreError::Exists(id.to_string()),
                    _ => io_err(&dir)(e),
                })?;
                (id.to_string(), dir)
            }
            None => {
                let mut n = 0u32;
                loop {
                    let id = format!("session-{created_unix}-{n}");
                    let dir = self.root.join(&id);
                    match fs::create_dir(&dir) {
                        Ok(()) => break (id, dir),
                        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                        Err(e) => return Err(io_err(&dir)(e)),
                    }
                }
            }
        };

        let config = SessionConfig {
            id: id.clone(),
            created_unix,
            engine,
            participant,
        };
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(&p))
        };
        write(CONFIG_FILE, serde_json::to_string_pretty(&config).expect("config serializes"))?;
        write(PATTERNS_FILE, library.to_json())?;
        fs::create_dir(dir.join(PATHS_DIR)).map_err(io_err(&dir))?;

        let open = |name: &str| {
            let p = dir.join(name);
            OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(&p)
                .map(BufWriter::new)
                .map_err(io_err(&p))
        };
        let events = open(EVENTS_FILE)?;
        let mut frames = open(FRAMES_FILE)?;
        frames.write_all(csv_header().as_bytes()).map_err(io_err(&dir))?;

        let mut w = SessionWriter {
            config,
            dir,
            events,
            frames,
            row: String::new(),
            paths: 0,
        };
        w.record(&LogRecord::Session {
            id: w.config.id.clone(),
            tick_ms: engine.tick_ms,
            participant: w.config.participant.clone(),
        })?;
        Ok(w)
    }

    pub fn load(&self, id: &str) -> Result<StoredSession, StoreError> {
        let dir = self.dir(id)?;
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(&p)).map(|t| (p, t))
        };
        let (p, text) = read(CONFIG_FILE)?;
        let config: SessionConfig = serde_json::from_str(&text).map_err(|source| StoreError::Json { path: p, source })?;
        let (p, text) = read(PATTERNS_FILE)?;
        let library = PatternLibrary::from_json(&text, &p.display().to_string())?;
        let records = read_log(&dir.join(EVENTS_FILE))?;
        Ok(StoredSession {
            config,
            library,
            records,
            dir,
        })
    }

    pub fn load_complete(&self, id: &str) -> Result<StoredSession, StoreError> {
        let s = self.load(id)?;
        if !s.is_complete() {
            return Err(StoreError::Incomplete(id.to_string()));
        }
        Ok(s)
    }

    pub fn read_file(&self, id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        let p = self.dir(id)?.join(name);
        fs::read(&p).map_err(io_err(&p))
    }
}

/// Append-only writer for one live session. Dropping it without
/// [`SessionWriter::close`] leaves the session incomplete.
#[derive(Debug)]
pub struct SessionWriter {
    config: SessionConfig,
    dir: PathBuf,
    events: BufWriter<File>,
    frames: BufWriter<File>,
    row: String,
    paths: u32,
}

impl SessionWriter {
    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&mut self, rec: &LogRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(rec).expect("log records serialize");
        line.push('\n');
        self.events.write_all(line.as_bytes()).map_err(io_err(&self.dir))
    }

    pub fn frame(&mut self, tick: u64, frame: &MotorFrame) -> Result<(), StoreError> {
        self.row.clear();
        push_csv_row(&mut self.row, tick, frame);
        self.frames.write_all(self.row.as_bytes()).map_err(io_err(&self.dir))
    }

    /// Store a drawn path exactly as received; returns its name relative to
    /// the session directory.
    pub fn save_path(&mut self, bytes: &[u8]) -> Result<String, StoreError> {
        self.paths += 1;
        let name = format!("{PATHS_DIR}/{:04}.json", self.paths);
        let p = self.dir.join(&name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
        Ok(name)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.events.flush().map_err(io_err(&self.dir))?;
        self.frames.flush().map_err(io_err(&self.dir))
    }

    pub fn close(mut self, end: &LogRecord) -> Result<(), StoreError> {
        self.record(end)?;
        self.flush()
    }
}

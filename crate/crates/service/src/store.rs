//! One JSON document per session under a root directory.
//!
//! Saves go through a temp file in the same directory followed by a rename,
//! so a crash at any point leaves either the old or the new document.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use linddun_core::model::{Session, SessionDocError, SessionId};
use serde::Serialize;
use thiserror::Error;

const EXT: &str = "json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("`{0}` is not a valid session id")]
    InvalidId(String),
    #[error("corrupt session document {}: {source}", path.display())]
    Corrupt {
        path: PathBuf,
        #[source]
        source: SessionDocError,
    },
    #[error("storage error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "SESSION_NOT_FOUND",
            Self::InvalidId(_) => "INVALID_SESSION_ID",
            Self::Corrupt { .. } => "CORRUPT_SESSION",
            Self::Io { .. } => "STORAGE_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub id: SessionId,
    pub app_name: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SessionStore {
    /// The root directory must already exist.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::Io {
                source: io::Error::new(io::ErrorKind::NotFound, "sessions directory does not exist"),
                path: root,
            });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &SessionId) -> Result<PathBuf, StoreError> {
        if !id.is_well_formed() {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(format!("{id}.{EXT}")))
    }

    pub fn save(&self, session: &Session) -> Result<(), StoreError> {
        self.save_with(session, |_| Ok(()))
    }

    /// `before_commit` runs after the temp file is written and synced but
    /// before it replaces the live document.
    pub(crate) fn save_with(
        &self,
        session: &Session,
        before_commit: impl FnOnce(&Path) -> io::Result<()>,
    ) -> Result<(), StoreError> {
        let path = self.path_for(&session.id)?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .suffix(".partial")
            .tempfile_in(&self.root)
            .map_err(io_err(&self.root))?;
        tmp.write_all(session.to_document().as_bytes())
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(io_err(tmp.path()))?;
        before_commit(tmp.path()).map_err(io_err(tmp.path()))?;
        tmp.persist(&path).map_err(|e| StoreError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        // make the rename itself durable; not every platform can open a directory
        if let Ok(dir) = fs::File::open(&self.root) {
            let _ = dir.sync_all();
        }
        Ok(())
    }

    pub fn load(&self, id: &SessionId) -> Result<Session, StoreError> {
        let path = self.path_for(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let session = Session::from_document(&text).map_err(|source| StoreError::Corrupt {
            path: path.clone(),
            source,
        })?;
        if session.id != *id {
            return Err(StoreError::Corrupt {
                path,
                source: SessionDocError::Invalid(format!(
                    "document id `{}` does not match its file name",
                    session.id
                )),
            });
        }
        Ok(session)
    }

    pub fn exists(&self, id: &SessionId) -> bool {
        self.path_for(id).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Summaries of every stored session, most recently updated first.
    /// A corrupt document fails the whole listing so it is not silently hidden.
    pub fn list(&self) -> Result<Vec<SessionSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXT) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let id = SessionId(stem.to_string());
            if !id.is_well_formed() {
                continue;
            }
            let s = self.load(&id)?;
            out.push(SessionSummary {
                id: s.id,
                app_name: s.report_meta.app_name,
                updated_at: s.updated_at,
            });
        }
        out.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}

//! Run-directory plumbing: a sentinel lock and an append-only manifest.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Held while a command writes into a run directory; removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// One JSON object per line; lines are only ever appended.
#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
}

impl Manifest {
    /// Starts a manifest in `dir`; fails if one already exists.
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        File::options()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    Error::invalid(format!("{} already holds a run; choose a new directory", dir.display()))
                }
                _ => Error::io(&path, e),
            })?;
        Ok(Self { path })
    }

    pub fn append<T: Serialize>(&self, entry: &T) -> Result<()> {
        let line = serde_json::to_string(entry).map_err(|e| Error::invalid(e.to_string()))?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

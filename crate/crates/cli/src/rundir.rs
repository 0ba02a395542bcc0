//! Run directories.
//!
//! A run is written into a hidden staging directory next to its destination
//! and renamed into place only when the command succeeds, so a run directory
//! never holds partial output. An existing destination is never touched:
//! `--force` picks the first free sibling `<name>-2`, `<name>-3`, ...

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

pub struct RunDir {
    staging: PathBuf,
    target: PathBuf,
    finished: bool,
}

fn sibling(path: &Path, k: usize) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{name}-{k}"))
}

impl RunDir {
    pub fn create(requested: &Path, force: bool) -> Result<Self, Failure> {
        let target = if requested.exists() {
            if !force {
                return Err(Failure::usage(format!(
                    "run directory {} already exists; pass --force to write a sibling",
                    requested.display()
                )));
            }
            (2..)
                .map(|k| sibling(requested, k))
                .find(|p| !p.exists())
                .expect("unbounded search")
        } else {
            requested.to_path_buf()
        };
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let staging = target.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        fs::create_dir_all(&staging).map_err(|e| Failure::runtime(format!("creating {}: {e}", staging.display())))?;
        Ok(Self {
            staging,
            target,
            finished: false,
        })
    }

    /// Where files go while the run is in progress.
    pub fn path(&self) -> &Path {
        &self.staging
    }

    /// Where the run will live once finished.
    #[cfg(test)]
    pub fn destination(&self) -> &Path {
        &self.target
    }

    /// Path of `rel` inside the staging directory, creating parent directories.
    pub fn file(&self, rel: &str) -> io::Result<PathBuf> {
        let p = self.staging.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
        fs::write(self.file(rel)?, contents)
    }

    pub fn write_json(&self, rel: &str, value: &impl Serialize) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        self.write(rel, text + "\n")
    }

    /// Appends one compact JSON line.
    pub fn append_jsonl(&self, rel: &str, value: &impl Serialize) -> io::Result<()> {
        let mut line = serde_json::to_string(value).map_err(io::Error::other)?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.file(rel)?)?
            .write_all(line.as_bytes())
    }

    pub fn finish(mut self) -> Result<PathBuf, Failure> {
        fs::rename(&self.staging, &self.target).map_err(|e| {
            Failure::runtime(format!(
                "moving {} to {}: {e}",
                self.staging.display(),
                self.target.display()
            ))
        })?;
        self.finished = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn existing_directories_need_force_and_get_siblings() {
        let root = tempfile::tempdir().unwrap();
        let want = root.path().join("run");
        let first = RunDir::create(&want, false).unwrap();
        first.write("a.txt", "x").unwrap();
        assert!(!want.exists());
        assert_eq!(first.finish().unwrap(), want);
        assert!(want.join("a.txt").exists());

        let err = RunDir::create(&want, false).err().unwrap();
        assert_eq!(err.code(), 2);
        let second = RunDir::create(&want, true).unwrap();
        assert_eq!(second.finish().unwrap(), root.path().join("run-2"));
        let third = RunDir::create(&want, true).unwrap();
        assert_eq!(third.destination(), root.path().join("run-3"));
        drop(third);
        assert!(!root.path().join("run-3").exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 2, "staging dir cleaned up");
    }
}

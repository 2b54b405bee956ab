//! Output directories and run manifests.
//!
//! Every command works inside a hidden sibling directory and renames it into
//! place once everything has been written, so a finished output directory is
//! always complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::Validation;

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, P: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<&'a str, &'a Path>,
    pub output: &'a Path,
    pub parameters: &'a P,
    pub started_unix: u64,
}

pub struct Staging {
    dir: PathBuf,
    dest: PathBuf,
    replace: bool,
    done: bool,
}

impl Staging {
    /// Creates the working directory for `dest`. An existing `dest` is an
    /// error unless `replace` is set.
    pub fn create(dest: &Path, replace: bool) -> Result<Self> {
        if dest.exists() && !replace {
            return Err(Validation(format!("output directory {} already exists (use --force)", dest.display())).into());
        }
        let name = dest
            .file_name()
            .ok_or_else(|| Validation(format!("bad output directory {}", dest.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Staging {
            dir,
            dest: dest.to_path_buf(),
            replace,
            done: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn write(&self, file: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(file);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(file, s)
    }

    pub fn manifest<P: Serialize>(
        &self,
        command: &str,
        config: Option<&Path>,
        seed: Option<u64>,
        inputs: &[(&str, &Path)],
        parameters: &P,
    ) -> Result<()> {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.write_json(
            "manifest.json",
            &RunManifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                config,
                seed,
                inputs: inputs.iter().copied().collect(),
                output: &self.dest,
                parameters,
                started_unix,
            },
        )
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.exists() && self.replace {
            fs::remove_dir_all(&self.dest).with_context(|| format!("removing {}", self.dest.display()))?;
        }
        fs::rename(&self.dir, &self.dest).with_context(|| format!("moving output into {}", self.dest.display()))?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

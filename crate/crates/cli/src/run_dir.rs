use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{CliError, CliResult, Exit};

/// A fresh output directory. Timestamps live only in `run.json`, so the
/// other artifacts of two equal runs compare byte for byte.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
    started: SystemTime,
}

impl RunDir {
    /// `<parent>/<name>`, or `<parent>/<command>-s<seed>-<unix time>` without
    /// a name; a numeric suffix avoids clobbering an existing directory.
    pub fn create(parent: &Path, name: Option<&str>, command: &str, seed: u64) -> CliResult<Self> {
        let started = SystemTime::now();
        let base = match name {
            Some(n) => {
                if n.is_empty() || n.contains(['/', '\\']) || n == "." || n == ".." {
                    return Err(CliError::usage(format!("bad run name {n:?}")));
                }
                n.to_string()
            }
            None => {
                let secs = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                format!("{command}-s{seed}-{secs}")
            }
        };
        let mut path = parent.join(&base);
        let mut k = 2;
        while path.exists() {
            path = parent.join(format!("{base}-{k}"));
            k += 1;
        }
        fs::create_dir_all(&path)
            .map_err(|e| CliError::new(Exit::Io, format!("cannot create {}: {e}", path.display())))?;
        Ok(Self { path, started })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.path.join(file);
        fs::write(&p, contents).map_err(|e| CliError::new(Exit::Io, format!("cannot write {}: {e}", p.display())))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::new(Exit::Io, format!("cannot serialize {file}: {e}")))?;
        self.write(file, text + "\n")
    }

    /// Records the parsed options, seed and wall time.
    pub fn write_manifest(&self, command: &str, options: &str, seed: u64) -> CliResult<()> {
        let started = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let seconds = self.started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let manifest = serde_json::json!({
            "command": command,
            "options": options,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started,
            "seconds": seconds,
        });
        self.write_json("run.json", &manifest)?;
        Ok(())
    }
}

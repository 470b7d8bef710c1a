use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::inputs::write_json;
use crate::Command;

/// Environment variable naming the directory that relative output paths resolve against.
pub const OUT_DIR_ENV: &str = "BRIDGE_OUT_DIR";

/// Everything needed to repeat a run: the fully resolved command plus the pool size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: String,
    pub threads: Option<usize>,
    pub command: Command,
}

impl Snapshot {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }
}

/// Where a command writes its artifacts.
pub enum OutputKind<'a> {
    File(&'a Path),
    Dir(&'a Path),
    None,
}

/// Snapshot and log paths next to the artifacts.
pub fn sidecars(kind: &OutputKind) -> Option<(PathBuf, PathBuf)> {
    match kind {
        OutputKind::File(p) => Some((p.with_extension("config.json"), p.with_extension("log"))),
        OutputKind::Dir(d) => Some((d.join("config.json"), d.join("run.log"))),
        OutputKind::None => None,
    }
}

pub fn resolve(path: &mut PathBuf, base: Option<&Path>) {
    if let Some(base) = base {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> CliResult<()> {
    write_json(path, snapshot)
}

/// Sends log records to stderr and, once opened, to the run's log file.
#[derive(Clone, Default)]
struct Tee(Arc<Mutex<Option<File>>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        if let Some(f) = self.0.lock().unwrap().as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        if let Some(f) = self.0.lock().unwrap().as_mut() {
            f.flush()?;
        }
        io::stderr().flush()
    }
}

/// Installs the logger; the returned handle attaches the log file later.
pub struct LogHandle(Arc<Mutex<Option<File>>>);

impl LogHandle {
    pub fn init() -> Self {
        let tee = Tee::default();
        let handle = LogHandle(tee.0.clone());
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
            .target(env_logger::Target::Pipe(Box::new(tee)))
            .init();
        handle
    }

    pub fn attach(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        *self.0.lock().unwrap() = Some(File::create(path)?);
        Ok(())
    }
}

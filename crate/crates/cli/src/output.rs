//! Atomic artifact writes and run metadata.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

/// Write to `path` when given, otherwise to stdout.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

/// Header lines for CSV artifacts: tool version and resolved config.
pub fn csv_comments<C: Serialize>(command: &str, config: &C) -> Result<Vec<String>, CliError> {
    Ok(vec![
        format!("chshsim {} {command}", chshsim::VERSION),
        format!("config: {}", serde_json::to_string(config).map_err(json_error)?),
    ])
}

pub fn json_error(e: serde_json::Error) -> CliError {
    CliError::Io(format!("json: {e}"))
}

/// JSON artifact: `{tool, version, command, config, <payload fields>}`.
#[derive(Serialize)]
pub struct Artifact<'a, C: Serialize, P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    #[serde(flatten)]
    pub payload: P,
}

pub fn artifact_json<C: Serialize, P: Serialize>(command: &str, config: &C, payload: P) -> Result<Vec<u8>, CliError> {
    let a = Artifact { tool: "chshsim", version: chshsim::VERSION, command, config, payload };
    let mut bytes = serde_json::to_vec_pretty(&a).map_err(json_error)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct Metadata<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    /// Seconds since the Unix epoch.
    timestamp: u64,
    config: &'a C,
    outputs: Vec<String>,
}

/// Sidecar path `<out>.meta.json`.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Write the metadata sidecar next to the first output.
pub fn write_metadata<C: Serialize>(command: &str, config: &C, outputs: &[&Path]) -> Result<(), CliError> {
    let Some(first) = outputs.first() else { return Ok(()) };
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = Metadata {
        tool: "chshsim",
        version: chshsim::VERSION,
        command,
        timestamp,
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).map_err(json_error)?;
    bytes.push(b'\n');
    write_atomic(&metadata_path(first), &bytes)
}

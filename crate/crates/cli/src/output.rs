use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

/// Error reported to the user as a JSON record on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl From<switchgp_core::Error> for CliError {
    fn from(e: switchgp_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new("csv", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Collects the files of one run and writes them under the output directory, if any.
pub struct RunOutput {
    dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn new(dir: Option<&Path>) -> CliResult<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    /// Writes `rows` as CSV with a header derived from the row type.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut w = csv::Writer::from_path(dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Prints the run document and writes it to `run.json`.
    pub fn finish(&self, command: &str, config: Value, summary: Value) -> CliResult<()> {
        let doc = json!({ "command": command, "config": config, "summary": summary });
        let text = serde_json::to_string_pretty(&doc)?;
        if let Some(dir) = &self.dir {
            fs::write(dir.join("run.json"), format!("{text}\n"))?;
        }
        // A closed stdout (e.g. piped into `head`) is not a failure of the run.
        let _ = writeln!(std::io::stdout().lock(), "{text}");
        Ok(())
    }
}

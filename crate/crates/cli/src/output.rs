//! Artifact assembly. Every file carries the config hash and seed; nothing
//! depends on wall-clock time or the worker count.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub provenance: Provenance,
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    result: &'a T,
}

impl Artifacts {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            provenance: Provenance { command: command.to_string(), config_hash: config_hash.to_string(), seed },
            files: Vec::new(),
        }
    }

    /// `{command, config_hash, seed, result}` as pretty JSON.
    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&Envelope { provenance: &self.provenance, result })
            .map_err(|e| CliError::Io(format!("serialising {name}: {e}")))?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    /// CSV preceded by a `#` provenance line.
    pub fn csv<I, S>(&mut self, name: &str, header: &str, rows: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        let _ = writeln!(text, "# command={} config_hash={} seed={}", self.provenance.command, self.provenance.config_hash, self.provenance.seed);
        let _ = writeln!(text, "{header}");
        for r in rows {
            let _ = writeln!(text, "{}", r.as_ref());
        }
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

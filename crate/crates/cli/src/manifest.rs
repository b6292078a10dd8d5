//! Run manifests and bit-identical replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{header, sha256_hex};
use crate::commands::execute;
use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// Command-line parameters of a run, beyond the config itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_index: Option<usize>,
    pub method: Option<String>,
    pub checkpoint_every: Option<usize>,
    pub resume: Option<String>,
    pub kind: Option<String>,
    pub artifact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub exit_code: u8,
    pub wall_clock_seconds: f64,
    /// Effective configuration after command-line overrides; empty for `plot`.
    pub config: String,
    pub params: Params,
    /// Every seed the run consumed, by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        let m: RunManifest = toml::from_str(text).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
        if !m.config.is_empty() && sha256_hex(m.config.as_bytes()) != m.config_hash {
            return Err(CliError::Usage("manifest: embedded config does not match its hash".into()));
        }
        if m.outputs.iter().any(|o| o.path.contains(['/', '\\']) || o.path.starts_with('.')) {
            return Err(CliError::Usage("manifest: output paths must be plain file names".into()));
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = header(&self.subcommand, &self.config_hash, "run manifest");
        s.push_str(&toml::to_string(self).expect("manifest serializes"));
        s
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }
}

/// Re-run a manifest into `out` (default: `replay/` beside the manifest) and
/// require byte-identical outputs and the same exit code.
pub fn replay(path: &Path, out: Option<PathBuf>) -> CliResult<RunManifest> {
    let text = fs::read_to_string(path)?;
    let original = RunManifest::parse(&text)?;
    let out = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("replay"));
    let config = (!original.config.is_empty()).then_some(original.config.as_str());
    let again = execute(&original.subcommand, config, &original.params, &out);
    let mut problems = Vec::new();
    if again.exit_code != original.exit_code {
        problems.push(format!("exit code {} became {}", original.exit_code, again.exit_code));
    }
    if again.config_hash != original.config_hash {
        problems.push("config hash changed".into());
    }
    let index = |m: &RunManifest| -> BTreeMap<String, String> {
        m.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect()
    };
    let (a, b) = (index(&original), index(&again));
    for (name, hash) in &a {
        match b.get(name) {
            None => problems.push(format!("{name} was not produced")),
            Some(h) if h != hash => problems.push(format!("{name} differs")),
            _ => {}
        }
    }
    problems.extend(b.keys().filter(|k| !a.contains_key(*k)).map(|k| format!("{k} is new")));
    if problems.is_empty() {
        Ok(again)
    } else {
        Err(CliError::Mismatch(format!("replay diverged: {}", problems.join("; "))))
    }
}

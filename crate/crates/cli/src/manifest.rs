use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Classify, CliResult, ExitKind};

pub const MANIFEST_FORMAT: &str = "simuser-manifest";
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display())).or_kind(ExitKind::Io)?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written next to every command's outputs. Carries no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub format: &'static str,
    pub format_version: u32,
    pub command: String,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT,
            format_version: MANIFEST_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_digest: None,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
            skipped: Vec::new(),
            warnings: Vec::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn config(&mut self, path: &Path) -> CliResult<()> {
        self.config_digest = Some(file_digest(path)?);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    /// Records an output; files get a digest, directories a marker.
    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        let digest = if path.is_dir() { "directory".to_string() } else { file_digest(path)? };
        self.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records an output whose bytes vary between identical runs, such as
    /// a log with latencies.
    pub fn volatile_output(&mut self, path: &Path) {
        self.outputs.insert(path.display().to_string(), "volatile".to_string());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let m = message.into();
        eprintln!("warning: {m}");
        self.warnings.push(m);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(key.to_string(), serde_json::to_value(value).expect("serializable detail"));
    }

    pub fn write(&self, path: &Path) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(path, text.as_bytes())?;
        Ok(path.to_path_buf())
    }
}

/// `<dir>/<file name>.manifest.json` for a file output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let name = output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{name}.manifest.json"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .or_kind(ExitKind::Io)?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display())).or_kind(ExitKind::Io)
}

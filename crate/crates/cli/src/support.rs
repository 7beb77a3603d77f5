//! Shared command plumbing: key=value config files, run manifests, timing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use mcsr_core::{CoreError, Result};

/// Parse a `key = value` config file (one pair per line, `#` comments).
pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CoreError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            });
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Typed lookup into a config map.
pub fn config_get<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            CoreError::Config(format!("config key '{key}': cannot parse '{raw}'"))
        }),
    }
}

/// Every artifact-producing command writes one of these next to its output.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration (defaults + config file + flags).
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write the manifest next to the command's outputs: into `out` when it
    /// is a directory, as `<out>.manifest.json` otherwise.
    pub fn write_next_to(&self, out: &Path) -> Result<()> {
        let path = manifest_path(&self.command, out);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
    }
}

pub fn manifest_path(command: &str, out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join(format!("manifest-{command}.json"))
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

/// Phase timer feeding `timings_ms`.
pub struct Phases {
    start: Instant,
}

impl Phases {
    pub fn start() -> Self {
        Phases {
            start: Instant::now(),
        }
    }

    /// Record the time since the previous mark under `name`.
    pub fn mark(&mut self, manifest: &mut RunManifest, name: &str) {
        manifest
            .timings_ms
            .insert(name.to_string(), self.start.elapsed().as_millis());
        self.start = Instant::now();
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Parse "a,b,c" into three fractions.
pub fn parse_split(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CoreError::Config(format!(
            "split '{text}' must have three comma-separated fractions"
        )));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| CoreError::Config(format!("bad split fraction '{p}'")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CoreError::Config(format!("bad number '{p}' in list")))
        })
        .collect()
}

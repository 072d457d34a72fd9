//! Config loading, dot-path overrides and the run manifest.

use std::path::{Path, PathBuf};

use eaclutch::dynamics::ClutchConfig;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const NOMINAL: &str = include_str!("../../../data/nominal.json");

/// Reads a config document; `nominal` selects the bundled one.
pub fn load_document(source: &str) -> Result<Value, CliError> {
    let text = if source == "nominal" {
        NOMINAL.to_string()
    } else {
        std::fs::read_to_string(source).map_err(|e| CliError::Usage(format!("cannot read config {source}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {source} is not valid JSON: {e}")))
}

/// Applies `key.path=value`. The value is parsed as JSON when possible and
/// kept as a string otherwise. Parent sections must exist; a misspelt leaf is
/// rejected later when the document is deserialized.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{spec}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("override path '{path}' has an empty component")));
    }
    let (last, parents) = keys.split_last().expect("non-empty split");
    let mut node = doc;
    for k in parents {
        node = node
            .get_mut(*k)
            .filter(|n| n.is_object())
            .ok_or_else(|| CliError::Usage(format!("override path '{path}': no section '{k}'")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("override path '{path}' does not name an object field")))?;
    obj.insert((*last).to_string(), value);
    Ok(())
}

pub fn parse_config(doc: Value) -> Result<ClutchConfig, CliError> {
    let cfg: ClutchConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn config_hash(cfg: &ClutchConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    pub command: Vec<String>,
    pub overrides: Vec<String>,
    pub output_dir: PathBuf,
    /// Only set by noise-injecting modes; none of the current commands draw random numbers.
    pub seed: Option<u64>,
    pub tool_version: String,
    pub config_hash: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_numbers_and_strings() {
        let mut doc = load_document("nominal").unwrap();
        apply_override(&mut doc, "drive.amplitude=250").unwrap();
        apply_override(&mut doc, "drive.waveform=dc").unwrap();
        let cfg = parse_config(doc).unwrap();
        assert_eq!(cfg.drive.amplitude, 250.0);
        assert_eq!(cfg.drive.waveform, eaclutch::polarization::Waveform::Dc);
    }

    #[test]
    fn unknown_section_is_rejected() {
        let mut doc = load_document("nominal").unwrap();
        assert!(apply_override(&mut doc, "drvie.amplitude=1").is_err());
        assert!(apply_override(&mut doc, "amplitude").is_err());
    }

    #[test]
    fn unknown_leaf_is_caught_by_validation() {
        let mut doc = load_document("nominal").unwrap();
        apply_override(&mut doc, "drive.amplitdue=1").unwrap();
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("amplitdue"), "{err}");
    }

    #[test]
    fn bundled_nominal_matches_defaults() {
        assert_eq!(parse_config(load_document("nominal").unwrap()).unwrap(), ClutchConfig::default());
    }
}

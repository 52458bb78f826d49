//! Plain `key = value` case files.
//!
//! Lines starting with `#` and blank lines are ignored, `[section]` headers
//! are accepted for readability but do not scope keys. Every key omitted
//! from the file keeps its default. Environment variables named
//! `VRFB_<KEY>` (key upper-cased, e.g. `VRFB_EPSILON=0.68`) override the
//! file after parsing.

use std::fmt::Write as _;
use std::path::Path;

use vrfb_core::config::CONFIG_SECTIONS;
use vrfb_core::CaseConfig;

use crate::error::{CliError, CliResult};

/// Prefix of environment overrides.
pub const ENV_PREFIX: &str = "VRFB_";

/// Parses case-file text on top of the defaults.
pub fn parse_str(text: &str) -> CliResult<CaseConfig> {
    let mut cfg = CaseConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value', got '{}'", n + 1, raw.trim())))?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a case file; see [`parse_str`].
pub fn parse_config(path: &Path) -> CliResult<CaseConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_str(&text)
}

/// Applies `VRFB_<KEY>` overrides from the given variables. Variables with
/// the prefix but no matching key are rejected.
pub fn apply_env_overrides<I>(cfg: &mut CaseConfig, vars: I) -> CliResult<Vec<String>>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut applied = Vec::new();
    let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, value) in vars {
        let key = name[ENV_PREFIX.len()..].to_ascii_lowercase();
        if matches!(key.as_str(), "log" | "threads") {
            continue;
        }
        cfg.set(&key, value.trim())
            .map_err(|e| CliError::Config(format!("environment variable {name}: {e}")))?;
        applied.push(key);
    }
    cfg.validate()?;
    Ok(applied)
}

/// Serializes every key, grouped by section, in a form [`parse_str`] reads
/// back to an identical configuration.
pub fn to_string(cfg: &CaseConfig) -> String {
    let mut out = String::new();
    for (section, keys) in CONFIG_SECTIONS {
        let _ = writeln!(out, "[{section}]");
        for key in *keys {
            let value = cfg.get(key).expect("listed key");
            let _ = writeln!(out, "{key} = {value}");
        }
        out.push('\n');
    }
    out
}

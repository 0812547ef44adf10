//! Merges a flat `key=value` config file into the argument list.

use std::ffi::OsString;
use std::path::Path;

use crate::args::SWITCHES;
use crate::error::CliError;

/// Finds `--config PATH` or `--config=PATH` after the subcommand.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key == "config" {
            return Err(CliError::Input(format!("config line {}: config files cannot nest", n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Inserts the file's settings right after the subcommand so that later
/// command-line occurrences override them.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for (key, value) in parse_config(&text)? {
        if SWITCHES.contains(&key.as_str()) {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                _ => {
                    return Err(CliError::Input(format!("config key {key} expects true or false, got {value:?}")))
                }
            }
        } else {
            injected.push(OsString::from(format!("--{key}={value}")));
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

//! `--config` expansion, seed resolution and metadata sidecars.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const SEED_ENV: &str = "PID_SEED";
pub const DEFAULT_SEED: u64 = 42;

/// Replaces `--config PATH` with the flags stored in the file.
///
/// The file is either a flat JSON object keyed by flag name or a metadata
/// sidecar whose `config` member is such an object. Expanded flags go right
/// after the subcommand, so flags typed on the command line win.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let value = it.next().ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
            path = Some(PathBuf::from(value));
        } else if let Some(v) = text.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    if rest.len() < 2 {
        return Err(CliError::Usage("--config must follow a subcommand".into()));
    }
    let flags = config_flags(&path)?;
    rest.splice(2..2, flags);
    Ok(rest)
}

fn config_flags(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let obj = match value {
        Value::Object(mut m) => match m.remove("config") {
            Some(Value::Object(inner)) => inner,
            Some(_) => return Err(CliError::Usage("config member must be an object".into())),
            None => m,
        },
        _ => return Err(CliError::Usage("config file must hold a JSON object".into())),
    };
    let mut out = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            Value::String(s) => out.extend([flag.into(), s.into()]),
            Value::Array(_) | Value::Object(_) => {
                return Err(CliError::Usage(format!("config key {key:?} must be a scalar")));
            }
        }
    }
    Ok(out)
}

/// Flag, then `PID_SEED`, then the default.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Written next to every output file as `<out>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    /// Resolved flags; feeding this back through `--config` reproduces the run.
    pub config: Map<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub generator: String,
    pub version: String,
}

impl Metadata {
    pub fn new<T: Serialize>(command: &str, args: &T, seeds: BTreeMap<String, u64>) -> Self {
        let config = match serde_json::to_value(args) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        Metadata {
            command: command.into(),
            config,
            seeds,
            generator: pid_core::rng::GENERATOR_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_flags_go_after_the_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"config": {"max_iter": 7, "gaussian": true, "timing": false, "init": "uniform"}}"#)
            .unwrap();
        let got = expand_config(os(&["pid", "solve", "--config", path.to_str().unwrap(), "--max-iter", "9"])).unwrap();
        assert_eq!(got, os(&["pid", "solve", "--gaussian", "--init", "uniform", "--max-iter", "7", "--max-iter", "9"]));
    }

    #[test]
    fn bad_configs_are_usage_errors() {
        assert!(matches!(expand_config(os(&["pid", "solve", "--config"])), Err(CliError::Usage(_))));
        assert!(matches!(
            expand_config(os(&["pid", "solve", "--config", "/nonexistent/x.json"])),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/b.json")), PathBuf::from("a/b.json.meta.json"));
    }
}

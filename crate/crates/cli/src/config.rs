//! Versioned JSON run configuration.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tar2::training::TrainConfig;

pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            train,
        }
    }
}

/// Best-effort line of the first `"key":` occurrence.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn last_key(path: &serde_path_to_error::Path) -> Option<String> {
    use serde_path_to_error::Segment;
    path.iter().rev().find_map(|s| match s {
        Segment::Map { key } => Some(key.clone()),
        _ => None,
    })
}

/// Parses and validates a config document. Errors name the offending field
/// and, where it can be located, the line.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| anyhow!("{origin}:{}:{}: {e}", e.line(), e.column()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| anyhow!("{origin}:1: config must be a JSON object"))?;
    let version = match obj.remove("version") {
        Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64().unwrap_or_default(),
        Some(other) => bail!(
            "{origin}:{}: version: expected an integer, got {other}",
            line_of_key(text, "version").unwrap_or(1)
        ),
        None => bail!("{origin}:1: version: missing field `version`"),
    };
    if version != CONFIG_VERSION {
        bail!(
            "{origin}:{}: version: unsupported config version {version} (expected {CONFIG_VERSION})",
            line_of_key(text, "version").unwrap_or(1)
        );
    }
    let train: TrainConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let line = last_key(e.path())
            .and_then(|k| line_of_key(text, &k))
            .or_else(|| unknown_field(e.inner()).and_then(|k| line_of_key(text, &k)))
            .unwrap_or(1);
        anyhow!("{origin}:{line}: {path}: {}", e.inner())
    })?;
    train.validate().map_err(|e| anyhow!("{origin}: invalid config: {e}"))?;
    Ok(RunConfig::new(train))
}

fn unknown_field(e: &serde_json::Error) -> Option<String> {
    let msg = e.to_string();
    let start = msg.find("unknown field `")? + "unknown field `".len();
    let end = msg[start..].find('`')?;
    Some(msg[start..start + end].to_string())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text, &path.display().to_string())
}

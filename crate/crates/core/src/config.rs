//! Aggregate run configuration. The text form is TOML with one table per
//! subsystem; every key is optional and falls back to the default scenario.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelConfig;
use crate::clustering::ClusteringConfig;
use crate::engine::EngineConfig;
use crate::gdb::GdbConfig;
use crate::protocol::ProtocolConfig;
use crate::rach::{EabConfig, RachConfig};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    /// Syntax error or unknown key.
    #[error("{}{}: {message}", Line(*line), key.as_deref().unwrap_or("<config>"))]
    Parse { key: Option<String>, line: Option<usize>, message: String },
    /// Well-formed value violating an invariant.
    #[error("{}{key}: {message}", Line(*line))]
    Invalid { key: String, line: Option<usize>, message: String },
}

struct Line(Option<usize>);

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(l) => write!(f, "line {l}: "),
            None => Ok(()),
        }
    }
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), line: None, message: message.into() }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { key, .. } => key.as_deref(),
            ConfigError::Invalid { key, .. } => Some(key),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Parse { line, .. } | ConfigError::Invalid { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub channel: ChannelConfig,
    pub clustering: ClusteringConfig,
    pub rach: RachConfig,
    pub eab: EabConfig,
    pub protocol: ProtocolConfig,
    pub gdb: GdbConfig,
    pub engine: EngineConfig,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.clustering.validate()?;
        self.rach.validate()?;
        self.eab.validate()?;
        self.protocol.validate()?;
        self.gdb.validate()?;
        self.engine.validate()?;
        Ok(())
    }

    /// Effective configuration with every key spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}

/// Parses and validates a configuration. Diagnostics carry the dotted key
/// path and, when it can be located, the 1-based line.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let config: Config = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        let key = e.span().map(|s| key_path_at(text, s.start)).filter(|k| !k.is_empty());
        ConfigError::Parse { key, line, message: e.message().trim().to_string() }
    })?;
    config.validate().map_err(|e| match e {
        ConfigError::Invalid { key, message, .. } => {
            let line = locate_key(text, &key);
            ConfigError::Invalid { key, line, message }
        }
        other => other,
    })?;
    Ok(config)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn table_header(line: &str) -> Option<&str> {
    let t = line.trim();
    t.strip_prefix('[')?.split(']').next().map(str::trim)
}

fn key_name(line: &str) -> Option<&str> {
    let (k, _) = line.split_once('=')?;
    let k = k.trim().trim_matches('"');
    (!k.is_empty() && !k.starts_with('#')).then_some(k)
}

/// Dotted path of the key on the line containing `offset`.
fn key_path_at(text: &str, offset: usize) -> String {
    let target = line_of(text, offset);
    let mut table = "";
    for (i, line) in text.lines().enumerate() {
        if let Some(h) = table_header(line) {
            table = h;
            if i + 1 == target {
                return table.to_string();
            }
        } else if i + 1 == target {
            return match (table, key_name(line)) {
                ("", Some(k)) => k.to_string(),
                (t, Some(k)) => format!("{t}.{k}"),
                (t, None) => t.to_string(),
            };
        }
    }
    table.to_string()
}

fn locate_key(text: &str, path: &str) -> Option<usize> {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = "";
    for (i, line) in text.lines().enumerate() {
        if let Some(h) = table_header(line) {
            current = h;
        } else if let Some(k) = key_name(line) {
            if (current == table && k == key) || (current.is_empty() && k == path) {
                return Some(i + 1);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.scenario.device_count, 10_000);
        assert_eq!(c.scenario.area_side, 200.0);
        assert_eq!(c.scenario.traffic_mix, [0.5, 0.25, 0.25]);
        assert_eq!(c.scenario.mobile_fraction, 0.5);
        assert_eq!(c.scenario.speed_variance, 2.0);
        assert_eq!(c.clustering.max_group_size, 50);
        assert_eq!(c.rach.preambles, 54);
        assert_eq!(c.eab.barring_factor, 0.1);
        assert_eq!(c.engine.horizon, 30.0);
    }

    #[test]
    fn invariant_violation_names_key_and_line() {
        let e = parse_config("[scenario]\ndevice_count = 5\n\n[rach]\npreambles = 0\n").unwrap_err();
        assert_eq!(e.key(), Some("rach.preambles"));
        assert_eq!(e.line(), Some(5));
        assert!(e.to_string().starts_with("line 5: rach.preambles"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        let e = parse_config("[rach]\nslot_length = 0.005\npreamble = 54\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { .. }));
        assert_eq!(e.line(), Some(3));
        assert_eq!(e.key(), Some("rach.preamble"));
        let e = parse_config("[radio]\nx = 1\n").unwrap_err();
        assert_eq!(e.line(), Some(1));
    }

    #[test]
    fn syntax_error_has_line() {
        let e = parse_config("[eab]\nbarring_factor = = 0.2\n").unwrap_err();
        assert_eq!(e.line(), Some(2));
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = Config::default();
        c.scenario.device_count = 1234;
        c.channel.csi_mae = 3.5;
        c.eab.exempt_acs = [11, 14].into();
        let text = c.to_toml();
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(parse_config(&text).unwrap().to_toml(), text);
    }
}

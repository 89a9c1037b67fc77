//! Run configuration files: TOML in, validated [`RunConfig`] out, with
//! diagnostics that point at the offending key and line.

use std::fmt;
use std::path::Path;

use surropt::engine::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
    pub suggestion: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(k), Some(l)) => write!(f, "line {l}: key `{k}`: {}", self.message)?,
            (Some(k), None) => write!(f, "key `{k}`: {}", self.message)?,
            (None, Some(l)) => write!(f, "line {l}: {}", self.message)?,
            (None, None) => f.write_str(&self.message)?,
        }
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that assigns `key` (bare or dotted tail), 1-based.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn backticked(s: &str) -> Vec<String> {
    s.split('`').skip(1).step_by(2).map(str::to_string).collect()
}

/// Closest valid name, if any is reasonably close.
pub fn suggest<'a>(unknown: &str, valid: impl IntoIterator<Item = &'a str>) -> Option<String> {
    valid
        .into_iter()
        .map(|v| (strsim::levenshtein(unknown, v), v))
        .filter(|(d, v)| *d <= 3.max(v.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, v)| v.to_string())
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let line = e.span().map(|s| line_of(text, s.start));
        if let Some(rest) = msg.strip_prefix("unknown field ") {
            let names = backticked(rest);
            let unknown = names.first().cloned();
            let suggestion = unknown
                .as_deref()
                .and_then(|u| suggest(u, names.iter().skip(1).map(String::as_str)));
            return ConfigError {
                key: unknown,
                line,
                message: msg.clone(),
                suggestion,
            };
        }
        ConfigError {
            key: None,
            line,
            message: msg,
            suggestion: None,
        }
    })?;
    cfg.validate().map_err(|e| {
        let message = e.to_string();
        // name the first top-level key the message mentions
        let key = ["stop", "surrogate_mode", "sub_iterations", "population", "eta", "workers", "epochs"]
            .into_iter()
            .find(|k| message.contains(k) || (*k == "stop" && matches!(e, surropt::Error::Expression { .. })));
        ConfigError {
            line: key.and_then(|k| find_key_line(text, k)),
            key: key.map(str::to_string),
            message,
            suggestion: None,
        }
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| anyhow::Error::new(e).context(format!("invalid config {}", path.display())))
}

/// Canonical TOML snapshot of a resolved configuration.
pub fn snapshot(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config serializes")
}

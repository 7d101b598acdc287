//! Session configuration and its key/value file format.
//!
//! The file is TOML restricted to top-level `key = value` pairs, one per
//! [`SessionConfig`] field. Absent keys take their defaults; unknown keys are
//! rejected.
//!
//! ```text
//! # 300 ms hypothesis cadence, 1 s unit window
//! asr_cadence_ms = 300
//! unit_window_ms = 1000
//! eot_threshold = 0.6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Interval between streaming ASR hypothesis requests.
    pub asr_cadence_ms: u64,
    /// Length of each audio chunk fed to the unit encoder.
    pub unit_chunk_ms: u64,
    /// Encoder context window; a multiple of `unit_chunk_ms`.
    pub unit_window_ms: u64,
    /// Most recent span of skipped units prepended before a transcript.
    pub gap_recovery_max_ms: u64,
    pub unit_rate_hz: u32,
    /// Upper bound on how long the engine waits for an end-of-turn decision.
    pub turn_wait_cap_ms: u64,
    pub eot_threshold: f64,
    pub silence_initiate_ms: u64,
    pub epsilon_ms: u64,
    pub asr_trim_window_s: u64,
    pub unit_vocab_size: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            asr_cadence_ms: 300,
            unit_chunk_ms: 100,
            unit_window_ms: 1000,
            gap_recovery_max_ms: 2000,
            unit_rate_hz: 25,
            turn_wait_cap_ms: 1000,
            eot_threshold: 0.5,
            silence_initiate_ms: 4000,
            epsilon_ms: 50,
            asr_trim_window_s: 10,
            unit_vocab_size: 1024,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.unit_chunk_ms == 0 {
            return bad("unit_chunk_ms must be positive");
        }
        if self.unit_window_ms == 0 || !self.unit_window_ms.is_multiple_of(self.unit_chunk_ms) {
            return bad("unit_window_ms must be a positive multiple of unit_chunk_ms");
        }
        if self.unit_rate_hz == 0 {
            return bad("unit_rate_hz must be positive");
        }
        if self.asr_cadence_ms == 0 {
            return bad("asr_cadence_ms must be positive");
        }
        if !(self.eot_threshold > 0.0 && self.eot_threshold < 1.0) {
            return bad("eot_threshold must lie strictly between 0 and 1");
        }
        if self.unit_vocab_size == 0 {
            return bad("unit_vocab_size must be positive");
        }
        Ok(())
    }

    /// Number of encoder chunks held in the sliding window.
    pub fn unit_window_chunks(&self) -> usize {
        (self.unit_window_ms / self.unit_chunk_ms) as usize
    }

    /// Duration represented by one unit, rounded down to whole milliseconds.
    pub fn unit_ms(&self) -> u64 {
        1000 / self.unit_rate_hz as u64
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SessionConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Applies `key = value` overrides (as carried by scenario files).
    pub fn with_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<Self, ConfigError> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let obj = base.as_object_mut().expect("config is an object");
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let cfg: SessionConfig =
            serde_json::from_value(base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.unit_window_chunks(), 10);
        assert_eq!(cfg.unit_ms(), 40);
    }

    #[test]
    fn absent_keys_default() {
        let cfg = SessionConfig::from_toml_str("# comment\neot_threshold = 0.7\n").unwrap();
        assert_eq!(cfg.eot_threshold, 0.7);
        assert_eq!(cfg.asr_cadence_ms, 300);
    }

    #[test]
    fn file_round_trips() {
        let cfg = SessionConfig {
            epsilon_ms: 20,
            ..Default::default()
        };
        assert_eq!(SessionConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SessionConfig::from_toml_str("eot_threshold = 1.0").is_err());
        assert!(SessionConfig::from_toml_str("eot_threshold = 0.0").is_err());
        assert!(SessionConfig::from_toml_str("unit_window_ms = 950").is_err());
        assert!(SessionConfig::from_toml_str("no_such_key = 1").is_err());
        assert!(SessionConfig::from_toml_str("epsilon_ms = -5").is_err());
    }

    #[test]
    fn json_overrides_apply() {
        let mut m = serde_json::Map::new();
        m.insert("silence_initiate_ms".into(), serde_json::json!(2500));
        let cfg = SessionConfig::default().with_overrides(&m).unwrap();
        assert_eq!(cfg.silence_initiate_ms, 2500);
        m.insert("bogus".into(), serde_json::json!(1));
        assert!(SessionConfig::default().with_overrides(&m).is_err());
    }
}

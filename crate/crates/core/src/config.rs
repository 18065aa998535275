use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Acceptance threshold shipped by default.
pub const DEFAULT_ALPHA: f64 = 0.7;
/// Number of uncommitted speculative rounds allowed in flight.
pub const DEFAULT_LOOKAHEAD: u32 = 4;
pub const DEFAULT_MAX_PROMPT_TOKENS: u32 = 2048;
pub const DEFAULT_MAX_RESPONSE_TOKENS: u32 = 8192;
pub const DEFAULT_TERMINAL_MARKER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    Alpha(f64),
    #[error("lookahead_window must be at least 1")]
    Window,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub alpha: f64,
    pub lookahead_window: u32,
    pub max_prompt_tokens: u32,
    pub max_response_tokens: u32,
    pub max_rounds: u32,
    pub seed: u64,
    pub terminal_marker: String,
    /// Wall-clock budget for one episode, in milliseconds.
    pub deadline_ms: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lookahead_window: DEFAULT_LOOKAHEAD,
            max_prompt_tokens: DEFAULT_MAX_PROMPT_TOKENS,
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            max_rounds: 16,
            seed: 0,
            terminal_marker: DEFAULT_TERMINAL_MARKER.to_owned(),
            deadline_ms: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.lookahead_window == 0 {
            return Err(ConfigError::Window);
        }
        if self.max_prompt_tokens == 0 {
            return Err(ConfigError::NonPositive("max_prompt_tokens"));
        }
        if self.max_response_tokens == 0 {
            return Err(ConfigError::NonPositive("max_response_tokens"));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::NonPositive("max_rounds"));
        }
        if self.terminal_marker.trim().is_empty() {
            return Err(ConfigError::Invalid("terminal_marker is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.alpha, 0.7);
        assert_eq!(cfg.lookahead_window, 4);
        assert_eq!(cfg.max_prompt_tokens, 2048);
        assert_eq!(cfg.max_response_tokens, 8192);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_alpha_and_window() {
        for alpha in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = EngineConfig {
                alpha,
                ..Default::default()
            };
            assert!(matches!(cfg.validate(), Err(ConfigError::Alpha(_))));
        }
        let cfg = EngineConfig {
            lookahead_window: 0,
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(ConfigError::Window));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: EngineConfig = serde_json::from_str(r#"{"max_rounds": 3}"#).unwrap();
        assert_eq!(cfg.max_rounds, 3);
        assert_eq!(cfg.alpha, 0.7);
    }
}

use super::IoError;
use crate::sim::ScenarioConfig;

/// Parses and validates a JSON scenario. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, IoError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    cfg.validate().map_err(|e| IoError::Validation(e.to_string()))?;
    Ok(cfg)
}

pub fn to_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

use std::path::Path;

use sumgd_core::decoding::DecodeConfig;

use crate::CliError;

/// Loads a decoding config from TOML or JSON (chosen by extension, `.json`
/// for JSON and anything else for TOML). Unset fields take their defaults.
pub fn load_config(path: &Path) -> Result<DecodeConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if is_json { parse_json(&text) } else { parse_toml(&text) }
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn parse_toml(text: &str) -> Result<DecodeConfig, String> {
    let cfg: DecodeConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn parse_json(text: &str) -> Result<DecodeConfig, String> {
    DecodeConfig::from_json(text).map_err(|e| e.to_string())
}

/// Config from an optional path; greedy when absent.
pub fn config_or_greedy(path: Option<&Path>) -> Result<DecodeConfig, CliError> {
    match path {
        Some(p) => load_config(p),
        None => Ok(DecodeConfig::greedy()),
    }
}

use std::fs;
use std::path::Path;

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};

/// TOML text carrying every field of `cfg`.
pub fn config_to_toml(cfg: &ModelConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// Parses and validates a config. Unknown keys are rejected by name.
pub fn config_from_toml(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<()> {
    fs::write(path, config_to_toml(cfg)?)?;
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    config_from_toml(&fs::read_to_string(path)?)
}

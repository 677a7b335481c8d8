use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use timid_core::model::ModelConfig;
use timid_core::simgen::GeneratorConfig;
use timid_core::train::TrainConfig;

/// Optional TOML run file. Every section falls back to library defaults and
/// unknown keys are rejected; command-line flags are applied on top.
///
/// ```toml
/// [generator]
/// task = "ordering"
/// n_normal = 40
///
/// [train]
/// epochs = 20
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunFile {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let f: RunFile = toml::from_str("[train]\nepochs = 3\n").unwrap();
        assert_eq!(f.train.epochs, 3);
        assert_eq!(f.generator, GeneratorConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunFile>("[train]\nepoch = 3\n").is_err());
        assert!(toml::from_str::<RunFile>("[trainer]\n").is_err());
        assert!(toml::from_str::<RunFile>("seed = 1\n").is_err());
    }
}

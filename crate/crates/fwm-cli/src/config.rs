//! Run configuration: TOML files and named presets.
//!
//! Config files are validated in full (unknown keys rejected, invariants
//! checked) before any compute starts.

use anyhow::{bail, Context};
use fwm::model::ModelConfig;
use fwm::train::LossConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate().context("model config")?;
        self.loss.validate().context("loss config")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-scale hyperparameters.
    Paper,
    /// Desk-scale defaults for the bundled tasks.
    Desk,
    /// Minutes-scale settings for smoke tests.
    Smoke,
}

impl Preset {
    pub fn run_config(self) -> RunConfig {
        match self {
            Preset::Paper => RunConfig { model: ModelConfig::default(), loss: LossConfig::paper() },
            Preset::Desk => RunConfig { model: ModelConfig::default(), loss: LossConfig::desk() },
            Preset::Smoke => RunConfig {
                model: ModelConfig {
                    latent_dim: 8,
                    hidden: 32,
                    encoder_fc: 16,
                    ..ModelConfig::default()
                },
                loss: LossConfig { batch_size: 32, epochs: 3, lr: 1e-3, ..LossConfig::desk() },
            },
        }
    }

    /// Default training-set size in transitions.
    pub fn transitions(self) -> usize {
        match self {
            Preset::Paper => 200_000,
            Preset::Desk => 20_000,
            Preset::Smoke => 300,
        }
    }

    /// Default evaluation-set size in episodes.
    pub fn eval_episodes(self) -> usize {
        match self {
            Preset::Paper => 100,
            Preset::Desk => 50,
            Preset::Smoke => 4,
        }
    }
}

/// Loads and validates a config file, or falls back to the preset.
pub fn load_config(path: Option<&Path>, preset: Preset) -> anyhow::Result<RunConfig> {
    let config = match path {
        None => preset.run_config(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            match toml::from_str::<RunConfig>(&text) {
                Ok(c) => c,
                Err(e) => bail!("config {} is invalid: {e}", p.display()),
            }
        }
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[model]\nlatent_dim = 16\nbogus_key = 3\n").unwrap();
        let err = load_config(Some(&p), Preset::Desk).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn partial_files_inherit_defaults_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.toml");
        std::fs::write(&p, "[loss]\nepochs = 7\n").unwrap();
        let cfg = load_config(Some(&p), Preset::Desk).unwrap();
        assert_eq!(cfg.loss.epochs, 7);
        assert_eq!(cfg.model.latent_dim, 32);

        std::fs::write(&p, "[model]\ngnn_layers = 0\n").unwrap();
        assert!(load_config(Some(&p), Preset::Desk).is_err());
    }
}

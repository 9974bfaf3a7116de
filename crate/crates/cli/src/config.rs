//! Experiment configuration file.
//!
//! ```toml
//! [train]
//! steps = 150
//! selector = "dyb4"
//! seed = 7
//!
//! [world]
//! problems = 400
//! degenerate_fraction = 0.3
//! ```
//!
//! Both tables are optional and every key has a default. Unknown keys are
//! rejected. The world is generated from `train.seed`.

use std::path::Path;

use coevo_core::coevo::TrainConfig;
use coevo_core::execenv::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::TrainArgs;
use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub world: WorldConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies command-line overrides on top of the file.
    pub fn apply(&mut self, args: &TrainArgs) {
        let t = &mut self.train;
        if let Some(v) = args.selector {
            t.selector = v;
        }
        if let Some(v) = args.prior.beta0_exp {
            t.beta0_exp = v;
        }
        if let Some(v) = args.prior.alpha_xy_exp {
            t.alpha_xy_exp = v;
        }
        if let Some(v) = args.tau {
            t.tau = v;
        }
        if let Some(v) = args.steps {
            t.steps = v;
        }
        if let Some(v) = args.rollouts {
            t.rollouts = v;
        }
        if let Some(v) = args.seed {
            t.seed = v;
        }
        if let Some(v) = args.baseline {
            t.baseline = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.world
            .validate()
            .map_err(|e| CliError::Config(format!("world: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the resolved configuration in canonical TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

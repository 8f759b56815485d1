use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{Matrix, ParameterSet};
use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::config::TrainingConfig;
use super::em::OptimizerState;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk model: config as key/value strings, parameters as nested lists
/// keyed by name (in their canonical order), and the optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: BTreeMap<String, String>,
    pub param_order: Vec<String>,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn new(config: &TrainingConfig, params: &ModelParams, optimizer: &OptimizerState) -> Self {
        let set = params.to_set();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.to_map(),
            param_order: set.names().map(str::to_string).collect(),
            params: set.iter().map(|(n, m)| (n.to_string(), m.to_rows())).collect(),
            optimizer: optimizer.clone(),
        }
    }

    pub fn config(&self) -> Result<TrainingConfig> {
        TrainingConfig::from_map(&self.config)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let mut set = ParameterSet::new();
        for name in &self.param_order {
            let rows = self
                .params
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{name}`")))?;
            set.push(name.clone(), Matrix::from_rows(rows)?);
        }
        ModelParams::from_set(&set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = TrainingConfig {
            hidden: 5,
            num_pooling_layers: 2,
            seed: 9,
            ..TrainingConfig::desk()
        };
        let params = ModelParams::init(3, 2, &cfg);
        let ck = Checkpoint::new(&cfg, &params, &OptimizerState::default());
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), params);
        assert_eq!(back.config().unwrap(), cfg);
    }

    #[test]
    fn wrong_version_rejected() {
        let cfg = TrainingConfig {
            hidden: 2,
            num_pooling_layers: 1,
            ..TrainingConfig::desk()
        };
        let mut ck = Checkpoint::new(&cfg, &ModelParams::init(1, 2, &cfg), &OptimizerState::default());
        ck.format_version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}

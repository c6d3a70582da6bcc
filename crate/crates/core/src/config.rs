//! Pipeline configuration, read from a single TOML file. Every section and
//! field is optional and falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::objective::ObjectiveWeights;
use crate::optimizer::AnnealConfig;
use crate::proposal::ProposalConfig;
use crate::scan::ScanConfig;
use crate::transfer::TransferConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scan: ScanConfig,
    pub proposal: ProposalConfig,
    pub objective: ObjectiveWeights,
    pub anneal: AnnealConfig,
    pub transfer: TransferConfig,
    pub fusion: FusionConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|m| Error::parse(path, m))
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.validate()?;
        self.objective.validate()?;
        self.anneal.validate()?;
        if self.transfer.max_distance <= 0.0 || self.transfer.pairwise_weight < 0.0 || self.transfer.neighbors == 0 {
            return Err(Error::InvalidParameter("transfer config out of range".into()));
        }
        if self.fusion.bin <= 0.0 || self.fusion.spacing <= 0.0 || self.fusion.surface_radius < 0.0 {
            return Err(Error::InvalidParameter("fusion config out of range".into()));
        }
        Ok(())
    }
}

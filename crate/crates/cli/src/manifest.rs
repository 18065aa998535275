use std::path::Path;

use serde::Deserialize;
use stepspec::backends::BackendSpec;
use stepspec::latsim::{QualitySampler, Scenario};
use stepspec::sapo::{RewardWeights, SimulatedSpecEnv, TrainConfig};
use stepspec::{EngineConfig, Policy};

use crate::CliError;

/// The JSON file passed with `--config`. Every section is optional; each
/// subcommand reads the ones it needs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub engine: EngineConfig,
    pub draft: Option<BackendSpec>,
    pub target: Option<BackendSpec>,
    pub problems: Vec<String>,
    pub policies: Option<Vec<Policy>>,
    pub scenario: Option<Scenario>,
    pub sweep: SweepSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub sampler: Option<QualitySampler>,
    pub episodes: u32,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            sampler: None,
            episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub weights: RewardWeights,
    pub env: SimulatedSpecEnv,
    pub config: TrainConfig,
}

/// Policies run per problem when the manifest does not list any.
pub const DEFAULT_POLICIES: [Policy; 3] = [Policy::Baseline, Policy::SequentialSpec, Policy::Fpsr];

impl Manifest {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Policies to run, in the order baseline first so later ones can report a speedup.
    pub fn policies(&self) -> Vec<Policy> {
        let chosen = self.policies.clone().unwrap_or_else(|| DEFAULT_POLICIES.to_vec());
        Policy::ALL.into_iter().filter(|p| chosen.contains(p)).collect()
    }
}

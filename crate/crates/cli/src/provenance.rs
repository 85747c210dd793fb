use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Written next to every output set; its `config` reproduces the run when
/// passed back through `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub target: String,
    pub cells: Vec<CellRecord>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub steps: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub flagged_paths: usize,
    pub files: Vec<String>,
}

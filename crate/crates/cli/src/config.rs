use std::path::Path;

use hypofit::constraints::ConstraintSpec;
use hypofit::estimate::{EstimationConfig, StopRule};
use hypofit::geometry::BoxDomain;
use hypofit::hypodist::HypoDistanceConfig;
use hypofit::losses::LossKind;
use hypofit::solver::SolverConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    #[serde(default)]
    pub lambda: f64,
}

/// Problem description read by `estimate` (and, for its `hypodist` and
/// `seed` sections, by `distance`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "box")]
    pub domain: BoxDomain,
    pub loss: LossSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub schedule: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub stop_rule: StopRule,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub hypodist: HypoDistanceConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    1e-6
}

impl ProblemConfig {
    pub fn estimation(&self) -> EstimationConfig {
        let mut e =
            EstimationConfig::new(self.domain.clone(), self.loss.kind, self.constraints.clone(), self.schedule.clone());
        e.lambda = self.penalty.lambda;
        e.epsilon = self.epsilon;
        e.epsilon_schedule = self.epsilon_schedule.clone();
        e.stop_rule = self.stop_rule;
        e.solver = self.solver;
        e.hypodist = self.hypodist.clone();
        e.seed = self.seed;
        e
    }
}

/// Parses JSON text, reporting the path of the offending key on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema { path, message: e.into_inner().to_string() }
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    parse_json(&read_text(path)?)
}

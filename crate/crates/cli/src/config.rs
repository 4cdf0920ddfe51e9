//! Declarative run configuration loaded from `--config <toml>`.
//!
//! Every table is optional and falls back to the library defaults; unknown
//! keys are rejected. Command-line flags override file values, and a global
//! `--seed` overrides every seed in the file.

use std::path::Path;

use anyhow::{Context, Result};
use qualkit::analysis::TertileBoundaries;
use qualkit::calibration::MonteCarloConfig;
use qualkit::datamodel::Hyperparams;
use qualkit::gradcheck::GradcheckConfig;
use qualkit::sampler::SamplerConfig;
use qualkit::synthlab::SynthConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub hyperparams: Hyperparams<f64>,
    pub sampler: SamplerConfig,
    pub synth: SynthConfig,
    pub train: TrainSection,
    pub calibration: MonteCarloConfig,
    pub gradcheck: GradcheckConfig,
    pub analysis: AnalysisSection,
    pub bootstrap: BootstrapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            hyperparams: Hyperparams::default(),
            sampler: SamplerConfig::default(),
            synth: SynthConfig::default(),
            train: TrainSection::default(),
            calibration: MonteCarloConfig::default(),
            gradcheck: GradcheckConfig::default(),
            analysis: AnalysisSection::default(),
            bootstrap: BootstrapSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Train / val / test fractions of the group-disjoint split.
    pub split: [f64; 3],
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = qualkit::synthlab::TrainConfig::default();
        Self {
            steps: t.steps,
            lr: t.lr,
            momentum: t.momentum,
            split: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub boundaries: TertileBoundaries,
    /// Boundary shift used for the migration count in `stratify`.
    pub shift: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            boundaries: TertileBoundaries::default(),
            shift: 0.05,
            floor: 0.21,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    pub metric: qualkit::metrics::BootstrapMetric,
    pub n: usize,
    pub seed: u64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            metric: qualkit::metrics::BootstrapMetric::Srcc,
            n: 2000,
            seed: 42,
        }
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_toml(p),
            None => Ok(Self::default()),
        }
    }

    /// Pushes the top-level seed into every seeded block.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.sampler.seed = s;
            self.synth.seed = s;
            self.calibration.seed = s;
            self.gradcheck.seed = s;
            self.analysis.seed = s;
            self.bootstrap.seed = s;
        }
    }
}

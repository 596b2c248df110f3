use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stpp_core::evaluation::{EvalGrid, PredictOptions};
use stpp_core::trainer::TrainConfig;
use stpp_core::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Ground-truth kernel id for `simulate`.
    pub kernel: String,
    /// Dataset file used by `fit`, `eval` and `predict`.
    pub path: Option<PathBuf>,
    pub mu: Option<f64>,
    pub horizon: Option<f64>,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub sequences: usize,
    pub lambda_bar: Option<f64>,
    pub pilot_sequences: usize,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kernel: "1d-nonstat".into(),
            path: None,
            mu: None,
            horizon: None,
            bounds: None,
            sequences: 2000,
            lambda_bar: None,
            pilot_sequences: 20,
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub grid: EvalGrid,
    pub predict: bool,
    pub predict_options: PredictOptions,
    pub heatmap_points: usize,
    pub curve_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: EvalGrid::default(),
            predict: false,
            predict_options: PredictOptions::default(),
            heatmap_points: 100,
            curve_points: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub kernel: String,
    pub grid: usize,
    pub extent: f64,
    pub tolerance: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { kernel: "1d-infrank".into(), grid: 300, extent: 100.0, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Root seed; simulation, split, initialization and batch order all
    /// derive from it.
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rank: RankConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            rank: RankConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        if self.seed > i64::MAX as u64 {
            bail!("seed {} does not fit a config file integer", self.seed);
        }
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.dataset.bounds = Some(vec![[-1.0, 1.0], [0.0, 0.5]]);
        c.dataset.mu = Some(0.1 + 0.2);
        c.train.learning_rate = 0.01;
        let back: ExperimentConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: ExperimentConfig = toml::from_str("seed = 5\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.model.hidden, vec![64, 64]);
    }
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use setref_core::analysis::Displacement;
use setref_core::data::DatasetConfig;
use setref_core::metrics::MetricConfig;
use setref_core::rng::derive_seed;
use setref_core::train::TrainConfig;
use setref_core::ModelConfig;

/// `k/i`: hold out fold `i` of `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub k: usize,
    pub index: usize,
}

impl Default for Fold {
    fn default() -> Self {
        Fold { k: 10, index: 0 }
    }
}

impl FromStr for Fold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (k, i) = s.split_once('/').ok_or_else(|| format!("expected k/i, got `{s}`"))?;
        let k: usize = k.trim().parse().map_err(|e| format!("fold count: {e}"))?;
        let index: usize = i.trim().parse().map_err(|e| format!("fold index: {e}"))?;
        if k < 2 || index >= k {
            return Err(format!("need k >= 2 and index < k, got {k}/{index}"));
        }
        Ok(Fold { k, index })
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.k, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub delta: f64,
    pub displacement: Displacement,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            delta: 0.10,
            displacement: Displacement::Joint,
        }
    }
}

/// Everything a run depends on besides its input files. The sub-seeds of
/// `dataset`, `train` and the model initialization are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    /// `None` trains on the whole file with no held-out set.
    pub fold: Option<Fold>,
    pub metrics: MetricConfig,
    pub perturb: PerturbConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            fold: Some(Fold::default()),
            metrics: MetricConfig::default(),
            perturb: PerturbConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn derive_seeds(&mut self) {
        self.dataset.seed = self.seed;
        self.train.seed = derive_seed(self.seed, 2);
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn fold_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }
}

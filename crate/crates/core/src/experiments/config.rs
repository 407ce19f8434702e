//! JSON experiment description.
//!
//! ```json
//! {
//!   "kind": "units_sweep",
//!   "dataset": { "type": "blobs", "classes": 10, "dim": 9, "spread": 0.2, "per_class": 500, "seed": 0 },
//!   "grid": [2, 5, 9, 18, 90],
//!   "seeds": [0, 1, 2, 3, 4],
//!   "model": { "hidden_dims": [32], "activation": "prelu" },
//!   "train": { "total_steps": 3000, "alpha": 1.0 }
//! }
//! ```
//!
//! `dataset` is either `{"type": "blobs", ...BlobSpec}` or
//! `{"type": "idx", "dir": "...", "max_train": 10000, "max_test": 2000}`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{load_idx_dir, make_blobs, BlobSpec, CenterLayout, Dataset, Split};
use crate::error::{invalid, Result};
use crate::model::Activation;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    UnitsSweep,
    AlphaSweep,
    ClassCountSweep,
    SoftmaxSensitivity,
    SimplexAudit,
    /// Single training run (the `train` subcommand).
    Train,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::UnitsSweep => "units_sweep",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::ClassCountSweep => "class_count_sweep",
            ExperimentKind::SoftmaxSensitivity => "softmax_sensitivity",
            ExperimentKind::SimplexAudit => "simplex_audit",
            ExperimentKind::Train => "train",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    Idx {
        dir: PathBuf,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
    },
}

/// Size of the desk-scale digits subset (first rows of each IDX split).
pub const DIGITS_TRAIN: usize = 10_000;
pub const DIGITS_TEST: usize = 2_000;

impl DatasetSpec {
    /// First 10k training and 2k test digits from an IDX directory.
    pub fn digits_subset(dir: impl Into<PathBuf>) -> Self {
        DatasetSpec::Idx { dir: dir.into(), max_train: Some(DIGITS_TRAIN), max_test: Some(DIGITS_TEST) }
    }

    /// Train and test splits.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Blobs(b) => make_blobs(b),
            DatasetSpec::Idx { dir, max_train, max_test } => {
                let mut train = load_idx_dir(dir, Split::Train)?;
                let mut test = load_idx_dir(dir, Split::Test)?;
                if let Some(n) = max_train {
                    train = train.take(*n);
                }
                if let Some(n) = max_test {
                    test = test.take(*n);
                }
                // both splits share the class count even if a cut drops a digit
                let c = train.num_classes.max(test.num_classes);
                train.num_classes = c;
                test.num_classes = c;
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Feature width M; `None` means C − 1.
    #[serde(default)]
    pub feature_dim: Option<usize>,
    /// Start the classifier at the simplex instead of Xavier noise.
    #[serde(default)]
    pub simplex_init: bool,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_trials() -> usize {
    1000
}
fn default_max_classes() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    /// Units M, α values, class counts k, or feature norms, depending on `kind`.
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Restarts per extension search in the simplex audit.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Largest class count in the simplex audit.
    #[serde(default = "default_max_classes")]
    pub max_classes: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Built-in desk-scale defaults for each kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let blobs = |classes, dim| {
            Some(DatasetSpec::Blobs(BlobSpec {
                classes,
                dim,
                centers: CenterLayout::SimplexScaled,
                spread: 0.2,
                per_class: 500,
                seed: 0,
            }))
        };
        let (dataset, grid, hidden) = match kind {
            ExperimentKind::UnitsSweep => (blobs(10, 9), vec![2.0, 5.0, 9.0, 18.0, 90.0], vec![32]),
            ExperimentKind::AlphaSweep => (blobs(3, 2), vec![0.0, 0.5, 1.0, 1.5], vec![16]),
            ExperimentKind::ClassCountSweep => (blobs(10, 9), (2..=10).map(f64::from).collect(), vec![32]),
            ExperimentKind::SoftmaxSensitivity => (None, vec![1.0, 10.0, 30.0, 50.0], vec![]),
            ExperimentKind::SimplexAudit => (None, vec![], vec![]),
            ExperimentKind::Train => (blobs(10, 9), vec![], vec![32]),
        };
        ExperimentSpec {
            kind,
            dataset,
            grid,
            seeds: default_seeds(),
            model: ModelConfig { hidden_dims: hidden, ..Default::default() },
            train: TrainConfig::default(),
            trials: default_trials(),
            max_classes: default_max_classes(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        let needs_data = matches!(self.kind, UnitsSweep | AlphaSweep | ClassCountSweep | Train);
        if needs_data {
            if self.dataset.is_none() {
                return Err(invalid(format!("{} needs a dataset", self.kind.as_str())));
            }
            if self.seeds.is_empty() {
                return Err(invalid("seeds must not be empty"));
            }
            self.train.validate()?;
        }
        if matches!(self.kind, UnitsSweep | AlphaSweep | ClassCountSweep | SoftmaxSensitivity) && self.grid.is_empty() {
            return Err(invalid("grid must not be empty"));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid values must be finite"));
        }
        let integral = |lo: f64| self.grid.iter().all(|&v| v.fract() == 0.0 && v >= lo);
        match self.kind {
            UnitsSweep if !integral(1.0) => Err(invalid("units grid must hold integers >= 1")),
            ClassCountSweep if !integral(2.0) => Err(invalid("class grid must hold integers >= 2")),
            AlphaSweep if self.grid.iter().any(|&a| a < 0.0) => Err(invalid("alpha grid must be >= 0")),
            SoftmaxSensitivity if self.grid.iter().any(|&n| n <= 0.0) => Err(invalid("norms must be > 0")),
            SimplexAudit if self.max_classes < 2 => Err(invalid("max_classes must be >= 2")),
            SimplexAudit if self.trials == 0 => Err(invalid("trials must be >= 1")),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [
            ExperimentKind::UnitsSweep,
            ExperimentKind::AlphaSweep,
            ExperimentKind::ClassCountSweep,
            ExperimentKind::SoftmaxSensitivity,
            ExperimentKind::SimplexAudit,
            ExperimentKind::Train,
        ] {
            ExperimentSpec::default_for(kind).validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let text = r#"{
            "kind": "alpha_sweep",
            "dataset": {"type": "blobs", "classes": 3, "dim": 2, "spread": 0.5, "per_class": 50},
            "grid": [0, 1]
        }"#;
        let spec = ExperimentSpec::from_json(text).unwrap();
        assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(spec.train, TrainConfig::default());
        let again = ExperimentSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);

        let idx = r#"{"kind": "class_count_sweep", "dataset": {"type": "idx", "dir": "data/mnist", "max_train": 10}, "grid": [5]}"#;
        let spec = ExperimentSpec::from_json(idx).unwrap();
        assert_eq!(
            spec.dataset,
            Some(DatasetSpec::Idx { dir: PathBuf::from("data/mnist"), max_train: Some(10), max_test: None })
        );
    }

    #[test]
    fn rejects_bad_grids() {
        let mut s = ExperimentSpec::default_for(ExperimentKind::UnitsSweep);
        s.grid = vec![2.5];
        assert!(s.validate().is_err());
        s.grid.clear();
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::default_for(ExperimentKind::ClassCountSweep);
        s.grid = vec![1.0];
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::default_for(ExperimentKind::AlphaSweep);
        s.grid = vec![-1.0];
        assert!(s.validate().is_err());
        s.grid = vec![1.0];
        s.dataset = None;
        assert!(s.validate().is_err());
        assert!(ExperimentSpec::from_json(r#"{"kind": "nope"}"#).is_err());
    }
}

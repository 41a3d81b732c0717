//! Run configuration. Every field has a default, so `{}` is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::WeightConfig;
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;
use crate::synthworld::DatasetSpec;
use crate::text::{MaxLengths, DEFAULT_MIN_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mle,
    Wle,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mle => "MLE",
            LossKind::Wle => "WLE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory written by `gen-data`; when absent the splits are generated
    /// from the specs below.
    pub dir: Option<PathBuf>,
    pub train: DatasetSpec,
    pub val: DatasetSpec,
    pub test: DatasetSpec,
    pub min_count: usize,
    pub max_lengths: MaxLengths,
}

impl Default for DataConfig {
    fn default() -> Self {
        let split = |dialogues, id_offset| DatasetSpec {
            dialogues,
            id_offset,
            ..DatasetSpec::default()
        };
        Self {
            dir: None,
            train: split(2000, 0),
            val: split(200, 1_000_000),
            test: split(200, 2_000_000),
            min_count: DEFAULT_MIN_COUNT,
            max_lengths: MaxLengths::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub weights: WeightConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a better validation mean rank before stopping; 0 never stops early.
    pub patience: usize,
    /// Negatives scored per sample for the WLE weights; `None` uses all.
    pub negatives_per_sample: Option<usize>,
    /// Divide sequence log-likelihoods by their token count in weights and ranking.
    pub length_normalize: bool,
    /// Write per-sample weight diagnostics (WLE only).
    pub weight_diagnostics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Wle,
            weights: WeightConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 30,
            patience: 5,
            negatives_per_sample: None,
            length_normalize: false,
            weight_diagnostics: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Loss of the second arm; set to `mle` for a null control.
    pub treatment: LossKind,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            treatment: LossKind::Wle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.5, 1.0, 2.0],
            gammas: vec![0.25, 0.5, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.weights.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.train.negatives_per_sample == Some(0) {
            return Err(Error::InvalidArgument("negatives_per_sample must be positive".into()));
        }
        let lr = self.train.optimizer.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        for spec in [&self.data.train, &self.data.val, &self.data.test] {
            if spec.feature_len != self.model.hidden {
                return Err(Error::InvalidArgument(format!(
                    "image feature length {} must equal the model width {}",
                    spec.feature_len, self.model.hidden
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn roundtrip_and_hash() {
        let mut cfg = RunConfig::default();
        cfg.train.loss = LossKind::Mle;
        cfg.train.weights.tau = 2.0;
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), RunConfig::default().hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(RunConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Schema { .. })));
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"hidden": 32}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"weights": {"tau": -1}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"loss": "gan"}}"#).is_err());
    }
}

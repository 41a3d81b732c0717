//! Checkpoint files: parameters, optimizer and RNG state, plus the config,
//! its hash, the vocabulary and the epoch as metadata.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{AdamState, CheckpointPayload, RngState};
use crate::text::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub rng: RngState,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        vocab: &Vocabulary,
        model: &Model,
        optimizer: Option<&AdamState>,
        rng: &ChaCha8Rng,
        epoch: usize,
    ) -> Self {
        Self {
            config: config.clone(),
            vocab: vocab.clone(),
            model: model.clone(),
            optimizer: optimizer.cloned(),
            rng: RngState::capture(rng),
            epoch,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        CheckpointPayload {
            metadata: vec![
                ("config".into(), self.config.to_json()),
                ("config_hash".into(), self.config.hash()),
                ("vocab".into(), self.vocab.to_text()),
                ("vocab_fingerprint".into(), self.vocab.fingerprint()),
                ("epoch".into(), self.epoch.to_string()),
            ],
            params: self.model.store.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng,
        }
        .encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let payload = CheckpointPayload::decode(bytes)?;
        let meta = |key: &str| {
            payload
                .meta(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
        };
        let config = RunConfig::from_json(meta("config")?)?;
        if config.hash() != meta("config_hash")? {
            return Err(Error::Checkpoint("config hash does not match the stored config".into()));
        }
        let vocab = Vocabulary::from_text(meta("vocab")?)?;
        let epoch = meta("epoch")?
            .parse()
            .map_err(|_| Error::Checkpoint("epoch is not a number".into()))?;
        let model = Model::from_store(config.model.clone(), payload.params)?;
        if model.vocab_size() != vocab.len() {
            return Err(Error::VocabularyMismatch(format!(
                "embedding has {} rows, vocabulary has {} tokens",
                model.vocab_size(),
                vocab.len()
            )));
        }
        Ok(Self {
            config,
            vocab,
            model,
            optimizer: payload.optimizer,
            rng: payload.rng,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless `vocab` is the one this checkpoint was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab != &self.vocab {
            return Err(Error::VocabularyMismatch(format!(
                "checkpoint vocabulary {} differs from dataset vocabulary {}",
                self.vocab.fingerprint(),
                vocab.fingerprint()
            )));
        }
        Ok(())
    }
}

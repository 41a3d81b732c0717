//! The full encoder–decoder with its parameter store.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{rank_candidates, DecoderParams, DecoderRunner, Ranking, SequenceScore};
use crate::encoder::{build_bundle, reason, EncoderParams, ReasoningTrace};
use crate::error::{Error, Result};
use crate::lstm::find;
use crate::numerics::{BoundParams, Graph, NodeId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Width of every recurrent state and of the image feature rows (`N`).
    pub hidden: usize,
    pub i_max: usize,
    /// Content-token limit for generation.
    pub max_answer_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            i_max: 3,
            max_answer_len: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if !(1..=5).contains(&self.i_max) {
            return Err(Error::InvalidArgument(format!("i_max must be in 1..=5, got {}", self.i_max)));
        }
        if self.max_answer_len == 0 {
            return Err(Error::InvalidArgument("max_answer_len must be positive".into()));
        }
        Ok(())
    }
}

/// One dialogue round as token ids, ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRound {
    pub dialogue: u64,
    /// 0-based round index.
    pub round: usize,
    /// `N×(H·W)`
    pub image: Tensor,
    pub question: Vec<usize>,
    /// Caption first, then one "question answer" sequence per earlier round.
    pub history: Vec<Vec<usize>>,
    pub answer: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
    pub gt_index: usize,
    pub relevance: Vec<u8>,
}

impl EncodedRound {
    pub fn sample_id(&self) -> String {
        format!("d{}r{}", self.dialogue, self.round + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        // A lookup reads one row for a one-hot input, so its fan-in is 1.
        let embedding = store.insert_uniform("embedding", &[vocab_size, config.embed_dim], 1, rng)?;
        let encoder = EncoderParams::init(&mut store, embedding, config.hidden, rng)?;
        let decoder = DecoderParams::init(&mut store, embedding, config.hidden, rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Rebuilds the parameter handles over a loaded store.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let embedding = find(&store, "embedding")?;
        let (_, e) = store.get(embedding).dims2("embedding")?;
        let encoder = EncoderParams::lookup(&store, embedding)?;
        let decoder = DecoderParams::lookup(&store, embedding)?;
        if e != config.embed_dim || encoder.feature_len != config.hidden || decoder.cell.hidden != config.hidden {
            return Err(Error::Checkpoint("parameter shapes do not match the model config".into()));
        }
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.vocab_size
    }

    /// Records the encoder for one round and returns the `N×1` embedding.
    pub fn encode(&self, graph: &mut Graph, bound: &BoundParams, round: &EncodedRound) -> Result<(NodeId, ReasoningTrace)> {
        let bundle = build_bundle(graph, bound, &self.encoder, &round.image, &round.question, &round.history)?;
        reason(graph, bound, &self.encoder, &bundle, self.config.i_max)
    }

    /// Embedding and trace without keeping a tape around.
    pub fn embed(&self, round: &EncodedRound) -> Result<(Vec<f64>, ReasoningTrace)> {
        let mut graph = Graph::new();
        let bound = self.store.bind(&mut graph, false);
        let (e, trace) = self.encode(&mut graph, &bound, round)?;
        Ok((graph.value(e).to_vec(), trace))
    }

    pub fn runner(&self, embedding: Vec<f64>) -> Result<DecoderRunner<'_>> {
        DecoderRunner::new(&self.store, &self.decoder, embedding)
    }

    pub fn rank(&self, round: &EncodedRound, length_normalize: bool) -> Result<(Ranking, Vec<SequenceScore>)> {
        let (e, _) = self.embed(round)?;
        rank_candidates(&self.runner(e)?, &round.candidates, round.gt_index, length_normalize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_round(n: usize) -> EncodedRound {
        let image = Tensor::new(&[n, 4], (0..n * 4).map(|i| ((i * 7) % 5) as f64 / 5.0).collect()).unwrap();
        EncodedRound {
            dialogue: 3,
            round: 1,
            image,
            question: vec![4, 5, 6],
            history: vec![vec![7, 8], vec![4, 9, 5]],
            answer: vec![9],
            candidates: vec![vec![8], vec![9], vec![4, 5]],
            gt_index: 1,
            relevance: vec![0, 1, 0],
        }
    }

    #[test]
    fn store_roundtrip_preserves_ranking() {
        let cfg = ModelConfig {
            embed_dim: 5,
            hidden: 6,
            i_max: 2,
            max_answer_len: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(cfg.clone(), 10, &mut rng).unwrap();
        let rebuilt = Model::from_store(cfg.clone(), model.store.clone()).unwrap();
        assert_eq!(rebuilt, model);
        let round = toy_round(6);
        assert_eq!(model.rank(&round, false).unwrap(), rebuilt.rank(&round, false).unwrap());
        let bad = ModelConfig { hidden: 7, ..cfg };
        assert!(Model::from_store(bad, model.store.clone()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { i_max: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { i_max: 6, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { hidden: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sample_ids_are_one_based() {
        assert_eq!(toy_round(2).sample_id(), "d3r2");
    }
}

//! Deterministic synthetic visual-dialogue world and VisDial-format I/O.
//!
//! Scenes are small grids of coloured shapes. Each dialogue has a caption
//! and a fixed number of templated question/answer rounds; every round
//! carries a candidate set whose negatives are answers to other questions.

mod generate;
mod scene;
mod visdial;

pub use generate::{
    answers_equivalent, generate_dataset, parse_question, sample_candidates, DatasetSpec, Meaning,
    QuestionKind,
};
pub use scene::{decode_features, render_features, Color, Object, Scene, Shape, Size, CODE_LEN};
pub use visdial::{export_visdial, load_visdial_json, parse_visdial};

pub(crate) use generate::derive_seed;

use crate::numerics::Tensor;

/// Candidate responses for one question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub options: Vec<String>,
    pub gt_index: usize,
    /// 1 for every option equivalent to the ground truth.
    pub relevance: Vec<u8>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn ground_truth(&self) -> &str {
        &self.options[self.gt_index]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round {
    pub question: String,
    pub answer: String,
    pub candidates: CandidateSet,
}

/// One image with its caption and dialogue rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueInstance {
    pub id: u64,
    pub seed: u64,
    pub caption: String,
    /// `N×H×W` feature grid.
    pub features: Tensor,
    pub rounds: Vec<Round>,
    /// Present for generated data; absent when loaded from files.
    pub scene: Option<Scene>,
}

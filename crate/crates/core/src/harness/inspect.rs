//! Attention dumps and trained-model probes.

use std::collections::BTreeSet;

use serde::Serialize;

use super::data::{encode_dialogue, Splits, SPLITS};
use crate::decoder::{generate, SearchMode};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::synthworld::{parse_question, DialogueInstance, Meaning, QuestionKind, Shape};
use crate::text::{decode, MaxLengths, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepAttention {
    pub step: usize,
    /// Row-major over the `grid_height × grid_width` cells.
    pub image: Vec<f64>,
    pub question: Vec<f64>,
    /// Caption first, then one entry per earlier round.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundAttention {
    /// 1-based.
    pub round: usize,
    pub question_tokens: Vec<String>,
    pub history: Vec<String>,
    pub steps: Vec<StepAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionDump {
    pub dialogue: u64,
    pub split: String,
    pub grid_height: usize,
    pub grid_width: usize,
    pub i_max: usize,
    pub rounds: Vec<RoundAttention>,
}

pub fn find_dialogue(splits: &Splits, id: u64) -> Result<(&'static str, &DialogueInstance)> {
    for split in SPLITS {
        if let Some(inst) = splits.get(split)?.iter().find(|d| d.id == id) {
            return Ok((split, inst));
        }
    }
    Err(Error::NotFound(format!("dialogue {id}")))
}

/// Per-round, per-step attention over image cells, question tokens and
/// history rounds for one dialogue.
pub fn dump_attention(
    model: &Model,
    vocab: &Vocabulary,
    max: &MaxLengths,
    splits: &Splits,
    dialogue: u64,
) -> Result<AttentionDump> {
    let (split, inst) = find_dialogue(splits, dialogue)?;
    let shape = inst.features.shape();
    let (grid_height, grid_width) = match shape {
        [_, h, w] => (*h, *w),
        other => (1, other.iter().skip(1).product()),
    };
    let mut rounds = Vec::new();
    for round in encode_dialogue(inst, vocab, max)? {
        let (_, trace) = model.embed(&round)?;
        let words = |ids: &[usize]| ids.iter().map(|&i| decode(&[i], vocab)).collect::<Vec<_>>();
        rounds.push(RoundAttention {
            round: round.round + 1,
            question_tokens: words(&round.question),
            history: round.history.iter().map(|h| decode(h, vocab)).collect(),
            steps: trace
                .steps
                .into_iter()
                .enumerate()
                .map(|(i, s)| StepAttention {
                    step: i + 1,
                    image: s.image_attention,
                    question: s.question_attention,
                    history: s.history_attention,
                })
                .collect(),
        });
    }
    Ok(AttentionDump {
        dialogue,
        split: split.to_string(),
        grid_height,
        grid_width,
        i_max: model.config.i_max,
        rounds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub text: String,
    pub log_prob: f64,
    pub ground_truth: bool,
    pub relevant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedRound {
    /// 1-based.
    pub round: usize,
    pub question: String,
    pub answer: String,
    pub gt_rank: usize,
    pub candidates: Vec<RankedCandidate>,
}

/// Every round of one dialogue with its candidates in model order.
pub fn rank_dialogue(
    model: &Model,
    vocab: &Vocabulary,
    max: &MaxLengths,
    splits: &Splits,
    dialogue: u64,
    length_normalize: bool,
) -> Result<Vec<RankedRound>> {
    let (_, inst) = find_dialogue(splits, dialogue)?;
    let mut out = Vec::new();
    for (round, enc) in inst.rounds.iter().zip(encode_dialogue(inst, vocab, max)?) {
        let (ranking, scores) = model.rank(&enc, length_normalize)?;
        let candidates = ranking
            .order
            .iter()
            .enumerate()
            .map(|(pos, &i)| RankedCandidate {
                rank: pos + 1,
                text: round.candidates.options[i].clone(),
                log_prob: scores[i].total,
                ground_truth: i == round.candidates.gt_index,
                relevant: round.candidates.relevance[i] != 0,
            })
            .collect();
        out.push(RankedRound {
            round: enc.round + 1,
            question: round.question.clone(),
            answer: round.answer.clone(),
            gt_rank: ranking.gt_rank,
            candidates,
        });
    }
    Ok(out)
}

/// Outcome of a trained-model probe: `hits` of `probes` passed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub hits: usize,
    pub probes: usize,
}

impl ProbeResult {
    pub fn rate(&self) -> f64 {
        if self.probes == 0 {
            0.0
        } else {
            self.hits as f64 / self.probes as f64
        }
    }
}

/// For every "how many squares" round in a scene with squares, checks that
/// the top-|squares| image cells by final-step attention contain every square.
pub fn square_attention_probe(
    model: &Model,
    vocab: &Vocabulary,
    max: &MaxLengths,
    instances: &[DialogueInstance],
) -> Result<ProbeResult> {
    let mut result = ProbeResult { hits: 0, probes: 0 };
    for inst in instances {
        let Some(scene) = &inst.scene else { continue };
        let squares: BTreeSet<usize> = scene
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some_and(|o| o.shape == Shape::Square))
            .map(|(i, _)| i)
            .collect();
        if squares.is_empty() {
            continue;
        }
        let encoded = encode_dialogue(inst, vocab, max)?;
        for (round, enc) in inst.rounds.iter().zip(&encoded) {
            if parse_question(&round.question) != Some(QuestionKind::Count { shape: Shape::Square }) {
                continue;
            }
            let (_, trace) = model.embed(enc)?;
            let last = trace.steps.last().ok_or(Error::Empty("reasoning trace"))?;
            let mut cells: Vec<usize> = (0..last.image_attention.len()).collect();
            cells.sort_by(|&a, &b| last.image_attention[b].total_cmp(&last.image_attention[a]).then(a.cmp(&b)));
            let top: BTreeSet<usize> = cells[..squares.len()].iter().copied().collect();
            result.probes += 1;
            if top == squares {
                result.hits += 1;
            }
        }
    }
    Ok(result)
}

/// Asks "how many <shape>s are there" about each scene at the start of a
/// dialogue and checks the greedy answer against the true count.
pub fn counting_probe(
    model: &Model,
    vocab: &Vocabulary,
    max: &MaxLengths,
    instances: &[DialogueInstance],
) -> Result<ProbeResult> {
    let mut result = ProbeResult { hits: 0, probes: 0 };
    for inst in instances {
        let Some(scene) = &inst.scene else { continue };
        for shape in Shape::ALL {
            let mut session = super::chat::ChatSession::new(model, vocab, max.clone(), inst)?;
            let answer = session.ask(&QuestionKind::Count { shape }.text())?;
            let truth = Meaning::Count(scene.count_where(|o| o.shape == shape));
            result.probes += 1;
            if Meaning::of_answer(&answer) == Some(truth) {
                result.hits += 1;
            }
        }
    }
    Ok(result)
}

/// Greedy answer for one encoded context, as text.
pub(crate) fn greedy_answer(model: &Model, vocab: &Vocabulary, round: &crate::model::EncodedRound) -> Result<String> {
    let (e, _) = model.embed(round)?;
    let runner = model.runner(e)?;
    let out = generate(&runner, model.config.max_answer_len, SearchMode::Greedy)?;
    Ok(decode(&out.tokens, vocab))
}

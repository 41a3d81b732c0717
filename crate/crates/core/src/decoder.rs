//! Recurrent answer decoder: teacher-forced sequence scoring, candidate
//! ranking and greedy/beam generation.
//!
//! The embedding from the encoder becomes the initial hidden state; the cell
//! state starts at zero. An answer `a_1..a_k` is scored by feeding
//! `BOS a_1..a_k` and summing the log-probabilities of `a_1..a_k EOS`.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{find, LstmParams, LstmState};
use crate::numerics::kernels;
use crate::numerics::{BoundParams, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::text::{BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    /// Shared with the encoder, `V×E`.
    pub embedding: ParamId,
    pub cell: LstmParams,
    /// `N×V`
    pub out_weight: ParamId,
    /// `1×V`
    pub out_bias: ParamId,
    pub vocab_size: usize,
}

impl DecoderParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        embedding: ParamId,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (vocab_size, embed_dim) = store.get(embedding).dims2("embedding")?;
        let cell = LstmParams::init(store, "decoder.cell", embed_dim, hidden, rng)?;
        let out_weight = store.insert_uniform("decoder.out.weight", &[hidden, vocab_size], hidden, rng)?;
        let out_bias = store.insert_uniform("decoder.out.bias", &[1, vocab_size], hidden, rng)?;
        Ok(Self {
            embedding,
            cell,
            out_weight,
            out_bias,
            vocab_size,
        })
    }

    pub fn lookup(store: &ParamStore, embedding: ParamId) -> Result<Self> {
        Ok(Self {
            embedding,
            cell: LstmParams::lookup(store, "decoder.cell")?,
            out_weight: find(store, "decoder.out.weight")?,
            out_bias: find(store, "decoder.out.bias")?,
            vocab_size: store.get(embedding).shape()[0],
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("answer"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::IndexOutOfRange {
                op: "decoder token",
                index: bad,
                len: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// Log-likelihood of one answer under teacher forcing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    /// Sum of `token_log_probs`, always `≤ 0`.
    pub total: f64,
    /// One entry per answer token plus the closing EOS.
    pub token_log_probs: Vec<f64>,
}

impl SequenceScore {
    pub fn token_count(&self) -> usize {
        self.token_log_probs.len()
    }

    pub fn length_normalized(&self) -> f64 {
        self.total / self.token_log_probs.len() as f64
    }
}

/// Recorded teacher-forced scoring: the total log-likelihood node and the
/// per-token scalar nodes.
#[derive(Clone, Debug)]
pub struct ScoredNodes {
    pub total: NodeId,
    pub token_log_probs: Vec<NodeId>,
}

/// Scores `answer` (content tokens, no framing) on the tape, conditioned on
/// `embedding` (`N×1`).
pub fn score_sequence(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &DecoderParams,
    embedding: NodeId,
    answer: &[usize],
) -> Result<ScoredNodes> {
    params.check_tokens(answer)?;
    let h = graph.transpose(embedding)?;
    let c = graph.constant(Tensor::zeros(&[1, params.cell.hidden]));
    let mut state = LstmState { h, c };
    let mut picks = Vec::with_capacity(answer.len() + 1);
    let mut input = BOS;
    for &target in answer.iter().chain(std::iter::once(&EOS)) {
        let x = graph.row_select(bound.node(params.embedding), input)?;
        state = params.cell.step(graph, bound, x, state)?;
        let logits = graph.matmul(state.h, bound.node(params.out_weight))?;
        let logits = graph.add(logits, bound.node(params.out_bias))?;
        let lp = graph.log_softmax(logits);
        picks.push(graph.pick(lp, target)?);
        input = target;
    }
    let total = graph.add_all(&picks)?;
    Ok(ScoredNodes {
        total,
        token_log_probs: picks,
    })
}

/// Value-only decoder bound to one embedding. Arithmetic matches the tape
/// path exactly, so scores agree bitwise.
pub struct DecoderRunner<'a> {
    store: &'a ParamStore,
    params: &'a DecoderParams,
    embedding: Vec<f64>,
}

/// Hidden and cell state after consuming some prefix.
#[derive(Clone, Debug)]
pub struct RunnerState {
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> DecoderRunner<'a> {
    pub fn new(store: &'a ParamStore, params: &'a DecoderParams, embedding: Vec<f64>) -> Result<Self> {
        if embedding.len() != params.cell.hidden {
            return Err(Error::ShapeMismatch {
                op: "decoder embedding",
                lhs: vec![embedding.len()],
                rhs: vec![params.cell.hidden],
            });
        }
        Ok(Self {
            store,
            params,
            embedding,
        })
    }

    /// Feeds `token` and returns the new state with the next-token log-probabilities.
    fn feed(&self, state: &RunnerState, token: usize) -> (RunnerState, Vec<f64>) {
        let table = self.store.get(self.params.embedding);
        let e = table.shape()[1];
        let x = &table.data()[token * e..(token + 1) * e];
        let (h, c) = self.params.cell.step_values(self.store, x, &state.h, &state.c);
        let v = self.params.vocab_size;
        let mut logits = vec![0.0; v];
        kernels::matmul_acc(&h, self.store.get(self.params.out_weight).data(), &mut logits, 1, h.len(), v);
        for (l, b) in logits.iter_mut().zip(self.store.get(self.params.out_bias).data()) {
            *l += b;
        }
        (RunnerState { h, c }, kernels::log_softmax(&logits))
    }

    fn initial(&self) -> RunnerState {
        RunnerState {
            h: self.embedding.clone(),
            c: vec![0.0; self.params.cell.hidden],
        }
    }

    pub fn score(&self, answer: &[usize]) -> Result<SequenceScore> {
        Ok(self.score_many(&[answer.to_vec()])?.remove(0))
    }

    /// Scores every candidate, sharing the work for common prefixes.
    pub fn score_many(&self, answers: &[Vec<usize>]) -> Result<Vec<SequenceScore>> {
        for a in answers {
            self.params.check_tokens(a)?;
        }
        // Distribution over the token following each consumed prefix.
        let mut cache: HashMap<Vec<usize>, (RunnerState, Vec<f64>)> = HashMap::new();
        let root = self.feed(&self.initial(), BOS);
        cache.insert(Vec::new(), root);
        let mut out = Vec::with_capacity(answers.len());
        for answer in answers {
            let mut lps = Vec::with_capacity(answer.len() + 1);
            for k in 0..=answer.len() {
                let target = if k < answer.len() { answer[k] } else { EOS };
                if !cache.contains_key(&answer[..k]) {
                    let (prev_state, _) = &cache[&answer[..k - 1]];
                    let next = self.feed(prev_state, answer[k - 1]);
                    cache.insert(answer[..k].to_vec(), next);
                }
                lps.push(cache[&answer[..k]].1[target]);
            }
            let mut total = lps[0];
            for &lp in &lps[1..] {
                total += lp;
            }
            out.push(SequenceScore {
                total,
                token_log_probs: lps,
            });
        }
        Ok(out)
    }
}

/// Anything that yields next-token log-probabilities; lets the search
/// routines run against rigged tables in tests.
pub trait NextTokenModel {
    type State: Clone;
    /// State and next-token log-probabilities right after BOS.
    fn start(&self) -> (Self::State, Vec<f64>);
    fn advance(&self, state: &Self::State, token: usize) -> (Self::State, Vec<f64>);
}

impl NextTokenModel for DecoderRunner<'_> {
    type State = RunnerState;

    fn start(&self) -> (RunnerState, Vec<f64>) {
        self.feed(&self.initial(), BOS)
    }

    fn advance(&self, state: &RunnerState, token: usize) -> (RunnerState, Vec<f64>) {
        self.feed(state, token)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Greedy,
    Beam(usize),
}

/// A generated answer and its log-likelihood. `tokens` excludes EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// False when the length limit cut the sequence before EOS.
    pub ended: bool,
}

fn argmax_low(lp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[best] {
            best = i;
        }
    }
    best
}

/// Generates up to `max_len` content tokens. Stops at EOS.
pub fn generate<M: NextTokenModel>(model: &M, max_len: usize, mode: SearchMode) -> Result<Generated> {
    if max_len < 1 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    match mode {
        SearchMode::Greedy => Ok(greedy(model, max_len)),
        SearchMode::Beam(0) => Err(Error::InvalidArgument("beam width must be at least 1".into())),
        SearchMode::Beam(k) => Ok(beam(model, max_len, k)),
    }
}

fn greedy<M: NextTokenModel>(model: &M, max_len: usize) -> Generated {
    let (mut state, mut lp) = model.start();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    loop {
        let t = argmax_low(&lp);
        log_prob += lp[t];
        if t == EOS {
            return Generated {
                tokens,
                log_prob,
                ended: true,
            };
        }
        tokens.push(t);
        if tokens.len() == max_len {
            return Generated {
                tokens,
                log_prob,
                ended: false,
            };
        }
        let next = model.advance(&state, t);
        state = next.0;
        lp = next.1;
    }
}

struct Hyp<S> {
    /// Emitted tokens, including EOS when finished.
    tokens: Vec<usize>,
    log_prob: f64,
    /// State and pending distribution; `None` once finished.
    pending: Option<(S, Vec<f64>)>,
}

fn rank_hyps(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn beam<M: NextTokenModel>(model: &M, max_len: usize, width: usize) -> Generated {
    let mut beams = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        pending: Some(model.start()),
    }];
    loop {
        if beams.iter().all(|h| h.pending.is_none()) {
            break;
        }
        // Rank every extension and every finished hypothesis together; keep
        // the best `width`, then expand only the survivors.
        let mut pool: Vec<(f64, Vec<usize>, Option<usize>, Option<usize>)> = Vec::new();
        for (bi, h) in beams.iter().enumerate() {
            match &h.pending {
                None => pool.push((h.log_prob, h.tokens.clone(), None, Some(bi))),
                Some((_, lp)) => {
                    for (t, &v) in lp.iter().enumerate() {
                        let mut toks = h.tokens.clone();
                        toks.push(t);
                        pool.push((h.log_prob + v, toks, Some(bi), None));
                    }
                }
            }
        }
        pool.sort_by(|a, b| rank_hyps((a.0, &a.1), (b.0, &b.1)));
        pool.truncate(width);
        let mut next = Vec::with_capacity(pool.len());
        for (score, toks, parent, kept) in pool {
            if let Some(bi) = kept {
                debug_assert!(beams[bi].pending.is_none());
                next.push(Hyp {
                    tokens: toks,
                    log_prob: score,
                    pending: None,
                });
                continue;
            }
            let parent = &beams[parent.expect("extension has a parent")];
            let t = *toks.last().unwrap_or(&EOS);
            let content = toks.len() - usize::from(t == EOS);
            let pending = if t == EOS || content == max_len {
                None
            } else {
                let (state, _) = parent.pending.as_ref().expect("active parent");
                Some(model.advance(state, t))
            };
            next.push(Hyp {
                tokens: toks,
                log_prob: score,
                pending,
            });
        }
        beams = next;
    }
    let best = beams
        .into_iter()
        .min_by(|a, b| rank_hyps((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
        .expect("beam never empty");
    let ended = best.tokens.last() == Some(&EOS);
    let mut tokens = best.tokens;
    if ended {
        tokens.pop();
    }
    Generated {
        tokens,
        log_prob: best.log_prob,
        ended,
    }
}

/// Candidate order by descending score, stable on ties.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ranking {
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    /// 1-based rank of the ground truth.
    pub gt_rank: usize,
}

pub fn rank_by_scores(scores: &[f64], gt_index: usize) -> Result<Ranking> {
    if scores.is_empty() {
        return Err(Error::Empty("rank_by_scores"));
    }
    if gt_index >= scores.len() {
        return Err(Error::IndexOutOfRange {
            op: "rank_by_scores",
            index: gt_index,
            len: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let gt_rank = order.iter().position(|&i| i == gt_index).expect("permutation") + 1;
    Ok(Ranking { order, gt_rank })
}

/// Ranks candidates by likelihood. With `length_normalize` the per-token
/// mean is used instead of the raw sum.
pub fn rank_candidates(
    runner: &DecoderRunner<'_>,
    candidates: &[Vec<usize>],
    gt_index: usize,
    length_normalize: bool,
) -> Result<(Ranking, Vec<SequenceScore>)> {
    let scores = runner.score_many(candidates)?;
    let keys: Vec<f64> = scores
        .iter()
        .map(|s| if length_normalize { s.length_normalized() } else { s.total })
        .collect();
    Ok((rank_by_scores(&keys, gt_index)?, scores))
}

#[cfg(test)]
mod tests;

//! Adaptive multi-modal reasoning encoder.
//!
//! Question tokens and history rounds are encoded by recurrent cells into
//! `N×l_Q` and `N×l_H` feature matrices; the image arrives as an `N×(H·W)`
//! grid. A reasoning recurrence then alternates two phases for `i_max` steps:
//!
//! 1. *comprehension*: each modality is attended by its own guided-attention
//!    block under the current guide, and the three attended vectors are
//!    merged as `tanh(W_m [f_Q; f_I; f_H] + b_m)`;
//! 2. *exploration*: the merged vector drives a recurrent cell whose new
//!    hidden state is the guide for the next step.
//!
//! The first guide is the question encoder's final hidden state. The final
//! embedding is `tanh(W_out · merged_{i_max})`.

mod attention;

pub use attention::{guided_attention, Attended, GuidedAttentionParams};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lstm::{find, LstmParams};
use crate::numerics::{BoundParams, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    /// Word embeddings shared with the decoder, `V×E`.
    pub embedding: ParamId,
    pub question: LstmParams,
    pub history: LstmParams,
    pub image_attention: GuidedAttentionParams,
    pub question_attention: GuidedAttentionParams,
    pub history_attention: GuidedAttentionParams,
    /// `N×3N`
    pub merge_weight: ParamId,
    /// `N×1`
    pub merge_bias: ParamId,
    pub reasoning: LstmParams,
    /// `N×N`
    pub output: ParamId,
    pub feature_len: usize,
}

impl EncoderParams {
    /// Initializes every encoder weight except the shared embedding table.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        embedding: ParamId,
        feature_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = feature_len;
        let embed_dim = store.get(embedding).dims2("embedding")?.1;
        let question = LstmParams::init(store, "encoder.question", embed_dim, n, rng)?;
        let history = LstmParams::init(store, "encoder.history", embed_dim, n, rng)?;
        let image_attention = GuidedAttentionParams::init(store, "encoder.attention.image", n, rng)?;
        let question_attention = GuidedAttentionParams::init(store, "encoder.attention.question", n, rng)?;
        let history_attention = GuidedAttentionParams::init(store, "encoder.attention.history", n, rng)?;
        let merge_weight = store.insert_uniform("encoder.merge.weight", &[n, 3 * n], 3 * n, rng)?;
        let merge_bias = store.insert_uniform("encoder.merge.bias", &[n, 1], 3 * n, rng)?;
        let reasoning = LstmParams::init(store, "encoder.reasoning", n, n, rng)?;
        let output = store.insert_uniform("encoder.output", &[n, n], n, rng)?;
        Ok(Self {
            embedding,
            question,
            history,
            image_attention,
            question_attention,
            history_attention,
            merge_weight,
            merge_bias,
            reasoning,
            output,
            feature_len: n,
        })
    }

    pub fn lookup(store: &ParamStore, embedding: ParamId) -> Result<Self> {
        let output = find(store, "encoder.output")?;
        Ok(Self {
            embedding,
            question: LstmParams::lookup(store, "encoder.question")?,
            history: LstmParams::lookup(store, "encoder.history")?,
            image_attention: GuidedAttentionParams::lookup(store, "encoder.attention.image")?,
            question_attention: GuidedAttentionParams::lookup(store, "encoder.attention.question")?,
            history_attention: GuidedAttentionParams::lookup(store, "encoder.attention.history")?,
            merge_weight: find(store, "encoder.merge.weight")?,
            merge_bias: find(store, "encoder.merge.bias")?,
            reasoning: LstmParams::lookup(store, "encoder.reasoning")?,
            output,
            feature_len: store.get(output).shape()[0],
        })
    }
}

/// The three modalities, each `N×M` with a shared `N`, plus the initial guide.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBundle {
    pub image: NodeId,
    pub question: NodeId,
    pub history: NodeId,
    /// `N×1`
    pub initial_guide: NodeId,
}

/// Values recorded at one reasoning step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReasoningStep {
    pub image_attention: Vec<f64>,
    pub question_attention: Vec<f64>,
    pub history_attention: Vec<f64>,
    pub image_feature: Vec<f64>,
    pub question_feature: Vec<f64>,
    pub history_feature: Vec<f64>,
    pub merged: Vec<f64>,
    pub guide: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReasoningTrace {
    pub steps: Vec<ReasoningStep>,
}

fn embed(graph: &mut Graph, bound: &BoundParams, params: &EncoderParams, tokens: &[usize]) -> Result<Vec<NodeId>> {
    tokens
        .iter()
        .map(|&t| graph.row_select(bound.node(params.embedding), t))
        .collect()
}

/// Per-token hidden states as the columns of an `N×l_Q` matrix, plus the
/// final hidden state as an `N×1` column.
pub fn encode_question(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    tokens: &[usize],
) -> Result<(NodeId, NodeId)> {
    if tokens.is_empty() {
        return Err(Error::Empty("encode_question"));
    }
    let xs = embed(graph, bound, params, tokens)?;
    let states = params.question.unroll(graph, bound, &xs)?;
    let rows: Vec<NodeId> = states.iter().map(|s| s.h).collect();
    let stacked = graph.concat(&rows, 0)?;
    let columns = graph.transpose(stacked)?;
    let last = graph.transpose(states[states.len() - 1].h)?;
    Ok((columns, last))
}

/// One column per history round (caption first), each the final hidden state
/// of that round's token sequence.
pub fn encode_history(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    rounds: &[Vec<usize>],
) -> Result<NodeId> {
    if rounds.is_empty() {
        return Err(Error::Empty("encode_history"));
    }
    let mut finals = Vec::with_capacity(rounds.len());
    for round in rounds {
        if round.is_empty() {
            return Err(Error::Empty("encode_history round"));
        }
        let xs = embed(graph, bound, params, round)?;
        let states = params.history.unroll(graph, bound, &xs)?;
        finals.push(states[states.len() - 1].h);
    }
    let stacked = graph.concat(&finals, 0)?;
    graph.transpose(stacked)
}

/// Builds the feature bundle from raw inputs. `image` is `N×H×W` or `N×(H·W)`.
pub fn build_bundle(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    image: &Tensor,
    question: &[usize],
    history: &[Vec<usize>],
) -> Result<FeatureBundle> {
    let n = image.shape()[0];
    if n != params.feature_len {
        return Err(Error::ShapeMismatch {
            op: "build_bundle",
            lhs: image.shape().to_vec(),
            rhs: vec![params.feature_len],
        });
    }
    let flat = image.reshape(&[n, image.len() / n])?;
    let image = graph.constant(flat);
    let (question, initial_guide) = encode_question(graph, bound, params, question)?;
    let history = encode_history(graph, bound, params, history)?;
    Ok(FeatureBundle {
        image,
        question,
        history,
        initial_guide,
    })
}

/// Runs the reasoning recurrence, returning the `N×1` embedding and its trace.
pub fn reason(
    graph: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    bundle: &FeatureBundle,
    i_max: usize,
) -> Result<(NodeId, ReasoningTrace)> {
    if i_max == 0 {
        return Err(Error::InvalidArgument("i_max must be at least 1".into()));
    }
    let mut guide = bundle.initial_guide;
    let mut state = crate::lstm::LstmState {
        h: graph.transpose(guide)?,
        c: graph.constant(Tensor::zeros(&[1, params.feature_len])),
    };
    let mut merged = guide;
    let mut steps = Vec::with_capacity(i_max);
    for _ in 0..i_max {
        let img = guided_attention(graph, bound, &params.image_attention, bundle.image, guide)?;
        let q = guided_attention(graph, bound, &params.question_attention, bundle.question, guide)?;
        let hist = guided_attention(graph, bound, &params.history_attention, bundle.history, guide)?;

        let stacked = graph.concat(&[q.feature, img.feature, hist.feature], 0)?;
        let mixed = graph.matmul(bound.node(params.merge_weight), stacked)?;
        let mixed = graph.add(mixed, bound.node(params.merge_bias))?;
        merged = graph.tanh(mixed);

        let input = graph.transpose(merged)?;
        state = params.reasoning.step(graph, bound, input, state)?;
        guide = graph.transpose(state.h)?;

        let v = |id: NodeId| graph.value(id).to_vec();
        steps.push(ReasoningStep {
            image_attention: v(img.weights),
            question_attention: v(q.weights),
            history_attention: v(hist.weights),
            image_feature: v(img.feature),
            question_feature: v(q.feature),
            history_feature: v(hist.feature),
            merged: v(merged),
            guide: v(guide),
        });
    }
    let projected = graph.matmul(bound.node(params.output), merged)?;
    let embedding = graph.tanh(projected);
    Ok((embedding, ReasoningTrace { steps }))
}

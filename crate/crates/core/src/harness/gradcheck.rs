//! Finite-difference checks of every graph primitive and of the composed
//! encoder → decoder → WLE loss pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decoder::score_sequence;
use crate::error::Result;
use crate::losses::{weighted_nll, wle_weights, LikelihoodRecord, WeightConfig};
use crate::model::{EncodedRound, Model, ModelConfig};
use crate::numerics::{grad_check, BoundParams, Graph, NodeId, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// The largest allowed step: roundoff, not truncation, limits accuracy on the
/// deep composite.
pub const PIPELINE_EPSILON: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub seed: u64,
    pub max_relative_error: f64,
    pub max_tensor_error: f64,
    pub elements: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub entries: Vec<CheckEntry>,
}

impl GradcheckSummary {
    fn max_of(&self, pipeline: bool, f: fn(&CheckEntry) -> f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| (e.name == "pipeline") == pipeline)
            .map(f)
            .fold(0.0, f64::max)
    }

    /// Elementwise maximum over all primitive checks.
    pub fn primitive_max(&self) -> f64 {
        self.max_of(false, |e| e.max_relative_error)
    }

    pub fn pipeline_max_element(&self) -> f64 {
        self.max_of(true, |e| e.max_relative_error)
    }

    pub fn pipeline_max_tensor(&self) -> f64 {
        self.max_of(true, |e| e.max_tensor_error)
    }

    /// Primitives are judged elementwise; the composed pipeline per parameter
    /// tensor, since some of its entries are too small for finite differences
    /// to resolve at double precision.
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.entries.is_empty() && self.primitive_max() < tolerance && self.pipeline_max_tensor() < tolerance
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,seed,max_relative_error,max_tensor_error,elements\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                e.name, e.seed, e.max_relative_error, e.max_tensor_error, e.elements
            ));
        }
        out
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Reduces a node to a scalar through fixed random weights so every output
/// element gets a distinct upstream gradient.
fn project(g: &mut Graph, x: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

type Builder = fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

/// Each primitive with the shapes of its inputs and output.
fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, Vec<usize>, Builder)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], vec![3, 2], |g, x| g.matmul(x[0], x[1])),
        ("add", vec![vec![3, 2], vec![3, 2]], vec![3, 2], |g, x| g.add(x[0], x[1])),
        ("sub", vec![vec![3, 2], vec![3, 2]], vec![3, 2], |g, x| g.sub(x[0], x[1])),
        ("mul", vec![vec![3, 2], vec![3, 2]], vec![3, 2], |g, x| g.mul(x[0], x[1])),
        ("scale", vec![vec![2, 3]], vec![2, 3], |g, x| Ok(g.scale(x[0], -1.7))),
        ("tanh", vec![vec![2, 3]], vec![2, 3], |g, x| Ok(g.tanh(x[0]))),
        ("sigmoid", vec![vec![2, 3]], vec![2, 3], |g, x| Ok(g.sigmoid(x[0]))),
        ("concat_rows", vec![vec![1, 3], vec![2, 3]], vec![3, 3], |g, x| g.concat(&[x[0], x[1]], 0)),
        ("concat_cols", vec![vec![2, 1], vec![2, 3]], vec![2, 4], |g, x| g.concat(&[x[0], x[1]], 1)),
        ("slice_rows", vec![vec![4, 3]], vec![2, 3], |g, x| g.slice(x[0], 0, 1, 2)),
        ("slice_cols", vec![vec![3, 4]], vec![3, 2], |g, x| g.slice(x[0], 1, 2, 2)),
        ("transpose", vec![vec![2, 3]], vec![3, 2], |g, x| g.transpose(x[0])),
        ("row_select", vec![vec![4, 3]], vec![1, 3], |g, x| g.row_select(x[0], 2)),
        ("sum", vec![vec![2, 3]], vec![1, 1], |g, x| Ok(g.sum(x[0]))),
        ("mean", vec![vec![2, 3]], vec![1, 1], |g, x| Ok(g.mean(x[0]))),
        ("softmax", vec![vec![5, 1]], vec![5, 1], |g, x| Ok(g.softmax(x[0]))),
        ("log_softmax", vec![vec![1, 5]], vec![1, 5], |g, x| Ok(g.log_softmax(x[0]))),
        ("pick", vec![vec![2, 3]], vec![1, 1], |g, x| g.pick(x[0], 4)),
        ("add_all", vec![vec![2, 2], vec![2, 2], vec![2, 2]], vec![2, 2], |g, x| g.add_all(x)),
    ]
}

pub fn check_primitives(seed: u64, epsilon: f64) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, output, build) in primitives() {
        let point: Vec<Tensor> = inputs.iter().map(|s| random(&mut rng, s)).collect();
        let weights = random(&mut rng, &output);
        let report = grad_check(
            |g, x| {
                let y = build(g, x)?;
                project(g, y, &weights)
            },
            &point,
            epsilon,
        )?;
        out.push(CheckEntry {
            name: name.to_string(),
            seed,
            max_relative_error: report.max_relative_error,
            max_tensor_error: report.max_tensor_error,
            elements: report.elements_checked,
        });
    }
    Ok(out)
}

const VOCAB: usize = 12;

fn random_round(rng: &mut ChaCha8Rng, n: usize, dialogue: u64) -> EncodedRound {
    let mut seq = |len: usize| (0..len).map(|_| rng.gen_range(4..VOCAB)).collect::<Vec<_>>();
    let question = seq(3);
    let history = vec![seq(2), seq(4)];
    let answer = seq(2);
    let candidates = vec![answer.clone(), seq(1), seq(3)];
    EncodedRound {
        dialogue,
        round: 1,
        image: random(rng, &[n, 4]),
        question,
        history,
        answer,
        candidates,
        gt_index: 0,
        relevance: vec![1, 0, 0],
    }
}

/// Encoder → decoder → WLE loss over a two-round batch, with every model
/// parameter perturbed and the per-sample weights frozen at the base point.
pub fn check_pipeline(seed: u64, epsilon: f64) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        embed_dim: 4,
        hidden: 5,
        i_max: 2,
        max_answer_len: 4,
    };
    let mut model = Model::new(config, VOCAB, &mut rng)?;
    // Unit-scale weights instead of the small training init. At the init the
    // guide couplings of the attention blocks carry gradients too small for
    // central differences to resolve at double precision.
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let shape = model.store.get(id).shape().to_vec();
        model.store.set(id, random(&mut rng, &shape))?;
    }
    let batch = [random_round(&mut rng, 5, 1), random_round(&mut rng, 5, 2)];

    let mut records = Vec::new();
    for round in &batch {
        let (e, _) = model.embed(round)?;
        let runner = model.runner(e)?;
        let scores = runner.score_many(&round.candidates)?;
        let negatives: Vec<_> = (0..scores.len()).filter(|&i| i != round.gt_index).map(|i| scores[i].clone()).collect();
        records.push(LikelihoodRecord::from_scores(&scores[round.gt_index], &negatives, false)?);
    }
    let weights = wle_weights(&records, &WeightConfig { tau: 1.0, gamma: 0.5 })?;
    let alphas = weights.alpha;

    let point: Vec<Tensor> = model.store.iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check(
        |g, x| {
            let bound = BoundParams::from_nodes(x.to_vec());
            let mut positives = Vec::new();
            for round in &batch {
                let (e, _) = model.encode(g, &bound, round)?;
                positives.push(score_sequence(g, &bound, &model.decoder, e, &round.answer)?.total);
            }
            weighted_nll(g, &positives, &alphas)
        },
        &point,
        epsilon,
    )?;
    Ok(CheckEntry {
        name: "pipeline".into(),
        seed,
        max_relative_error: report.max_relative_error,
        max_tensor_error: report.max_tensor_error,
        elements: report.elements_checked,
    })
}

/// Primitive and pipeline checks for each seed.
pub fn run_gradcheck(seeds: &[u64], epsilon: f64) -> Result<GradcheckSummary> {
    let mut entries = Vec::new();
    for &seed in seeds {
        entries.extend(check_primitives(seed, epsilon)?);
        entries.push(check_pipeline(seed, PIPELINE_EPSILON)?);
    }
    Ok(GradcheckSummary { entries })
}

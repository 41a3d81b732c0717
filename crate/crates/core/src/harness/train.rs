//! Mini-batch training with MLE or WLE.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{LossKind, RunConfig, TrainConfig};
use super::data::{encode_split, load_splits, train_vocab, Splits};
use super::evaluate::{evaluate, Evaluation};
use crate::decoder::score_sequence;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::losses::{weight_diagnostics_csv, weighted_nll, wle_weights, LikelihoodRecord, SampleWeights};
use crate::model::{EncodedRound, Model};
use crate::numerics::{adam_step, AdamState, Graph};
use crate::synthworld::derive_seed;
use crate::text::Vocabulary;

/// Seed streams derived from the run seed.
const INIT_STREAM: u64 = 101;
const SHUFFLE_STREAM: u64 = 102;
const NEGATIVE_STREAM: u64 = 103;

/// Everything a run needs that depends only on the data config and seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub vocab: Vocabulary,
    pub train: Vec<EncodedRound>,
    pub val: Vec<EncodedRound>,
    pub test: Vec<EncodedRound>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let splits = load_splits(&config.data, config.seed)?;
        Self::from_splits(config, splits)
    }

    pub fn from_splits(config: &RunConfig, splits: Splits) -> Result<Self> {
        let vocab = train_vocab(&splits, config.data.min_count)?;
        let max = &config.data.max_lengths;
        Ok(Self {
            train: encode_split(&splits.train, &vocab, max)?,
            val: encode_split(&splits.val, &vocab, max)?,
            test: encode_split(&splits.test, &vocab, max)?,
            vocab,
            splits,
        })
    }

    pub fn rounds(&self, split: &str) -> Result<&[EncodedRound]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::NotFound(format!("split `{other}`"))),
        }
    }
}

pub fn initial_model(config: &RunConfig, vocab_size: usize) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, INIT_STREAM));
    Model::new(config.model.clone(), vocab_size, &mut rng)
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Value of the optimized objective for the batch (a sum over samples).
    pub loss: f64,
    pub weights: Option<SampleWeights>,
}

/// Scores the batch on one tape, computes the per-sample weights, and takes
/// one optimizer step.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[&EncodedRound],
    train: &TrainConfig,
    neg_rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Empty("train batch"));
    }
    let mut graph = Graph::new();
    let bound = model.store.bind(&mut graph, true);
    let mut positives = Vec::with_capacity(batch.len());
    let mut records = Vec::with_capacity(batch.len());
    for round in batch {
        let (e, _) = model.encode(&mut graph, &bound, round)?;
        let scored = score_sequence(&mut graph, &bound, &model.decoder, e, &round.answer)?;
        positives.push(scored.total);
        if train.loss == LossKind::Wle {
            let runner = model.runner(graph.value(e).to_vec())?;
            let mut negatives: Vec<usize> = (0..round.candidates.len()).filter(|&i| i != round.gt_index).collect();
            if let Some(k) = train.negatives_per_sample {
                if k < negatives.len() {
                    negatives = negatives.choose_multiple(neg_rng, k).copied().collect();
                    negatives.sort_unstable();
                }
            }
            let cands: Vec<Vec<usize>> = negatives.iter().map(|&i| round.candidates[i].clone()).collect();
            let neg_scores = runner.score_many(&cands)?;
            let pos_score = runner.score(&round.answer)?;
            records.push(LikelihoodRecord::from_scores(&pos_score, &neg_scores, train.length_normalize)?);
        }
    }
    let (alphas, weights) = match train.loss {
        LossKind::Mle => (vec![1.0; batch.len()], None),
        LossKind::Wle => {
            let w = wle_weights(&records, &train.weights)?;
            (w.alpha.clone(), Some(w))
        }
    };
    let loss_node = weighted_nll(&mut graph, &positives, &alphas)?;
    let loss = graph.value(loss_node).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {loss}")));
    }
    let mut grads = graph.backward(loss_node)?;
    let flat: Vec<Vec<f64>> = model
        .store
        .ids()
        .map(|id| {
            grads
                .take(bound.node(id))
                .unwrap_or_else(|| vec![0.0; model.store.get(id).len()])
        })
        .collect();
    adam_step(&mut model.store, &flat, adam)?;
    Ok(StepOutcome { loss, weights })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_val: Option<MetricsReport>,
    pub epochs_run: usize,
    /// Model at the best validation epoch (the initial model when no epoch ran).
    pub best_model: Model,
}

fn loss_row(step: usize, split: &str, loss: f64) -> String {
    format!("{step},{split},{loss:.9},,,,,,")
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn write_nan_dump(out: &Path, epoch: usize, batch_index: usize, batch: &[&EncodedRound], detail: &str) -> Result<PathBuf> {
    let path = out.join("nan_batch.json");
    let ids: Vec<String> = batch.iter().map(|r| r.sample_id()).collect();
    let dump = serde_json::json!({
        "epoch": epoch,
        "batch": batch_index,
        "samples": ids,
        "detail": detail,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&dump)?)?;
    Ok(path)
}

fn validate(model: &Model, prepared: &Prepared, config: &RunConfig) -> Result<Evaluation> {
    evaluate(model, &prepared.val, config.train.length_normalize)
}

/// Trains from the seeded initial model, writing the metrics CSV and the
/// `initial`, `last` and `best` checkpoints into `out`.
pub fn train(config: &RunConfig, prepared: &Prepared, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let mut model = initial_model(config, prepared.vocab.len())?;
    let mut adam = AdamState::new(&model.store, config.train.optimizer);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, SHUFFLE_STREAM));
    let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, NEGATIVE_STREAM));

    let metrics_csv = out.join("metrics.csv");
    std::fs::write(
        &metrics_csv,
        format!("# config_hash={}\n{}\n", config.hash(), MetricsReport::CSV_HEADER),
    )?;
    let diag_path = out.join("weights.csv");
    let diagnostics = config.train.weight_diagnostics && config.train.loss == LossKind::Wle;
    if diagnostics {
        std::fs::write(&diag_path, "epoch,sample_id,max_beta,alpha\n")?;
    }

    let checkpoint = |model: &Model, adam: &AdamState, rng: &ChaCha8Rng, epoch: usize, name: &str| {
        Checkpoint::new(config, &prepared.vocab, model, Some(adam), rng, epoch).save(&out.join(name))
    };
    checkpoint(&model, &adam, &shuffle_rng, 0, "initial.ckpt")?;
    let best_checkpoint = out.join("best.ckpt");
    checkpoint(&model, &adam, &shuffle_rng, 0, "best.ckpt")?;

    let mut best_val: Option<MetricsReport> = None;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    let mut since_best = 0;
    let mut epochs_run = 0;
    if config.train.epochs > 0 {
        let v = validate(&model, prepared, config)?;
        append(&metrics_csv, &format!("{}\n", v.report.csv_row(0, "val", Some(v.mean_nll))))?;
        best_val = Some(v.report);
    }

    let mut order: Vec<usize> = (0..prepared.train.len()).collect();
    for epoch in 1..=config.train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut diag = String::new();
        for (b, chunk) in order.chunks(config.train.batch_size).enumerate() {
            let batch: Vec<&EncodedRound> = chunk.iter().map(|&i| &prepared.train[i]).collect();
            let step = match train_step(&mut model, &mut adam, &batch, &config.train, &mut neg_rng) {
                Ok(step) => step,
                Err(Error::NonFinite(detail)) => {
                    let path = write_nan_dump(out, epoch, b, &batch, &detail)?;
                    return Err(Error::NanLoss {
                        epoch,
                        batch: b,
                        detail: format!("{detail}; batch dumped to {}", path.display()),
                    });
                }
                Err(e) => return Err(e),
            };
            total += step.loss;
            if let (true, Some(w)) = (diagnostics, &step.weights) {
                let ids: Vec<String> = batch.iter().map(|r| r.sample_id()).collect();
                diag.push_str(&weight_diagnostics_csv(epoch, &ids, w, false));
            }
        }
        if diagnostics {
            append(&diag_path, &diag)?;
        }
        let mut rows = String::new();
        let _ = writeln!(rows, "{}", loss_row(epoch, "train", total / prepared.train.len() as f64));
        let v = validate(&model, prepared, config)?;
        let _ = writeln!(rows, "{}", v.report.csv_row(epoch, "val", Some(v.mean_nll)));
        append(&metrics_csv, &rows)?;
        epochs_run = epoch;

        if best_val.as_ref().map_or(true, |b| v.report.mean_rank < b.mean_rank) {
            best_val = Some(v.report);
            best_epoch = epoch;
            best_model = model.clone();
            since_best = 0;
            checkpoint(&model, &adam, &shuffle_rng, epoch, "best.ckpt")?;
        } else {
            since_best += 1;
        }
        checkpoint(&model, &adam, &shuffle_rng, epoch, "last.ckpt")?;
        if config.train.patience > 0 && since_best >= config.train.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        out_dir: out.to_path_buf(),
        metrics_csv,
        best_checkpoint,
        best_epoch,
        best_val,
        epochs_run,
        best_model,
    })
}

//! Candidate ranking over a split and metric aggregation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{compute_metrics, ndcg, MetricsReport};
use crate::model::{EncodedRound, Model};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub ranks: Vec<usize>,
    /// Mean negative log-likelihood of the ground-truth answers.
    pub mean_nll: f64,
}

/// Ranks every round's candidates and aggregates the metrics.
pub fn evaluate(model: &Model, rounds: &[EncodedRound], length_normalize: bool) -> Result<Evaluation> {
    if rounds.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let mut ranks = Vec::with_capacity(rounds.len());
    let mut ndcgs = Vec::with_capacity(rounds.len());
    let mut nll = 0.0;
    let mut n = 0;
    for round in rounds {
        let (ranking, scores) = model.rank(round, length_normalize)?;
        n = n.max(round.candidates.len());
        ranks.push(ranking.gt_rank);
        nll += -scores[round.gt_index].total;
        let ranked: Vec<u8> = ranking.order.iter().map(|&i| round.relevance[i]).collect();
        if ranked.contains(&1) {
            ndcgs.push(ndcg(&ranked)?);
        }
    }
    let mut report = compute_metrics(&ranks, n)?;
    if !ndcgs.is_empty() {
        report.ndcg = Some(ndcgs.iter().sum::<f64>() / ndcgs.len() as f64);
    }
    Ok(Evaluation {
        report,
        ranks,
        mean_nll: nll / rounds.len() as f64,
    })
}

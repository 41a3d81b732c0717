//! Likelihood losses. MLE sums the negative log-likelihood of each positive
//! response; WLE scales each sample by a weight that compares the positive
//! to its hardest negative:
//!
//! ```text
//! β_mn = 1 − log p_neg_mn / log p_pos_m
//! β̃_m  = exp(τ · max_n β_mn)
//! α_m  = max(β̃_m, γ)
//! L    = Σ_m −α_m · log p_pos_m
//! ```
//!
//! A poorly modelled positive (very negative log-likelihood) with a likely
//! negative gets `α > 1`; an easy sample is damped towards `γ`. Weights are
//! constants with respect to the gradient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoder::SequenceScore;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId};

/// Every log-likelihood is clamped to at most this value so the ratio in β
/// never divides by zero.
pub const LOG_PROB_CEILING: f64 = -1e-8;

fn clamp(lp: f64) -> Result<f64> {
    if !lp.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood {lp}")));
    }
    Ok(lp.min(LOG_PROB_CEILING))
}

/// Log-likelihoods of one sample's positive and its negatives, clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodRecord {
    positive: f64,
    negatives: Vec<f64>,
}

impl LikelihoodRecord {
    pub fn new(positive: f64, negatives: Vec<f64>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::Empty("likelihood record negatives"));
        }
        Ok(Self {
            positive: clamp(positive)?,
            negatives: negatives.into_iter().map(clamp).collect::<Result<_>>()?,
        })
    }

    /// Builds a record from decoder scores, optionally using per-token means.
    pub fn from_scores(positive: &SequenceScore, negatives: &[SequenceScore], length_normalize: bool) -> Result<Self> {
        let value = |s: &SequenceScore| if length_normalize { s.length_normalized() } else { s.total };
        Self::new(value(positive), negatives.iter().map(value).collect())
    }

    pub fn positive(&self) -> f64 {
        self.positive
    }

    pub fn negatives(&self) -> &[f64] {
        &self.negatives
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub tau: f64,
    pub gamma: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { tau: 1.0, gamma: 0.5 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights {
    pub beta: Vec<Vec<f64>>,
    pub max_beta: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub alpha: Vec<f64>,
}

fn check_batch(records: &[LikelihoodRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    Ok(())
}

/// `Σ −log p_pos`.
pub fn mle_loss(records: &[LikelihoodRecord]) -> Result<f64> {
    check_batch(records)?;
    let mut total = 0.0;
    for r in records {
        total += -r.positive;
    }
    Ok(total)
}

/// Per-sample mean of the MLE loss, for reporting only.
pub fn mle_loss_mean(records: &[LikelihoodRecord]) -> Result<f64> {
    Ok(mle_loss(records)? / records.len() as f64)
}

pub fn wle_weights(records: &[LikelihoodRecord], config: &WeightConfig) -> Result<SampleWeights> {
    check_batch(records)?;
    config.validate()?;
    let mut out = SampleWeights {
        beta: Vec::with_capacity(records.len()),
        max_beta: Vec::with_capacity(records.len()),
        beta_tilde: Vec::with_capacity(records.len()),
        alpha: Vec::with_capacity(records.len()),
    };
    for r in records {
        if r.positive >= 0.0 {
            return Err(Error::Internal("positive log-likelihood escaped clamping".into()));
        }
        let beta: Vec<f64> = r.negatives.iter().map(|&n| 1.0 - n / r.positive).collect();
        let max_beta = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let beta_tilde = (config.tau * max_beta).exp();
        out.alpha.push(beta_tilde.max(config.gamma));
        out.beta.push(beta);
        out.max_beta.push(max_beta);
        out.beta_tilde.push(beta_tilde);
    }
    Ok(out)
}

/// `Σ −α · log p_pos`, accumulated in the same order as [`mle_loss`] so that
/// unit weights reproduce it bitwise.
pub fn wle_loss(records: &[LikelihoodRecord], config: &WeightConfig) -> Result<f64> {
    let weights = wle_weights(records, config)?;
    let mut total = 0.0;
    for (r, &a) in records.iter().zip(&weights.alpha) {
        total += -(a * r.positive);
    }
    Ok(total)
}

/// `Σ −w_m · ℓ_m` on the tape. Weights are plain numbers, so no gradient
/// reaches them; unit weights give the MLE loss.
pub fn weighted_nll(graph: &mut Graph, log_likelihoods: &[NodeId], weights: &[f64]) -> Result<NodeId> {
    if log_likelihoods.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            op: "weighted_nll",
            lhs: vec![log_likelihoods.len()],
            rhs: vec![weights.len()],
        });
    }
    let terms: Vec<NodeId> = log_likelihoods
        .iter()
        .zip(weights)
        .map(|(&lp, &w)| graph.scale(lp, -w))
        .collect();
    graph.add_all(&terms)
}

/// One CSV block of per-sample weight diagnostics.
pub fn weight_diagnostics_csv(epoch: usize, sample_ids: &[String], weights: &SampleWeights, header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str("epoch,sample_id,max_beta,alpha\n");
    }
    for ((id, mb), a) in sample_ids.iter().zip(&weights.max_beta).zip(&weights.alpha) {
        let _ = writeln!(out, "{epoch},{id},{mb:.9},{a:.9}");
    }
    out
}

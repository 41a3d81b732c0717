//! Retrieval metrics over the rank of the ground-truth response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mean_rank: f64,
    /// Mean NDCG over rounds that carry relevance flags.
    pub ndcg: Option<f64>,
    pub rounds: usize,
}

/// Aggregates 1-based ranks among `n` candidates.
///
/// Ranks are tallied into a histogram and summed in rank order, so the
/// result does not depend on the order of `ranks`.
pub fn compute_metrics(ranks: &[usize], n: usize) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Empty("compute_metrics"));
    }
    let mut counts = vec![0usize; n + 1];
    for &r in ranks {
        if r == 0 || r > n {
            return Err(Error::IndexOutOfRange {
                op: "compute_metrics rank",
                index: r,
                len: n,
            });
        }
        counts[r] += 1;
    }
    let total = ranks.len() as f64;
    let (mut recip, mut rank_sum) = (0.0, 0.0);
    let (mut r1, mut r5, mut r10) = (0usize, 0usize, 0usize);
    for (r, &c) in counts.iter().enumerate().skip(1) {
        if c == 0 {
            continue;
        }
        recip += c as f64 / r as f64;
        rank_sum += (c * r) as f64;
        if r <= 1 {
            r1 += c;
        }
        if r <= 5 {
            r5 += c;
        }
        if r <= 10 {
            r10 += c;
        }
    }
    Ok(MetricsReport {
        mrr: recip / total,
        r1: r1 as f64 / total,
        r5: r5 as f64 / total,
        r10: r10 as f64 / total,
        mean_rank: rank_sum / total,
        ndcg: None,
        rounds: ranks.len(),
    })
}

/// NDCG for binary relevance flags listed in ranked order. DCG runs over the
/// whole ranking; the ideal ranking puts all `k` relevant items first.
pub fn ndcg(ranked_relevance: &[u8]) -> Result<f64> {
    let k = ranked_relevance.iter().filter(|&&r| r != 0).count();
    if k == 0 {
        return Err(Error::InvalidArgument("ndcg needs at least one relevant candidate".into()));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let mut dcg = 0.0;
    let mut ideal = 0.0;
    for (i, &rel) in ranked_relevance.iter().enumerate() {
        if rel != 0 {
            dcg += discount(i);
        }
    }
    for i in 0..k {
        ideal += discount(i);
    }
    Ok(dcg / ideal)
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "step,split,loss,mrr,r1,r5,r10,mean_rank,ndcg";

    /// One CSV row; an absent loss or NDCG is left empty.
    pub fn csv_row(&self, step: usize, split: &str, loss: Option<f64>) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        format!(
            "{step},{split},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            opt(loss),
            self.mrr,
            self.r1,
            self.r5,
            self.r10,
            self.mean_rank,
            opt(self.ndcg)
        )
    }

    /// Table cells in the usual layout: MRR as a fraction, recalls in percent.
    pub fn table_cells(&self) -> [String; 5] {
        [
            format!("{:.4}", self.mrr),
            format!("{:.2}", 100.0 * self.r1),
            format!("{:.2}", 100.0 * self.r5),
            format!("{:.2}", 100.0 * self.r10),
            format!("{:.2}", self.mean_rank),
        ]
    }
}

pub const TABLE_COLUMNS: [&str; 5] = ["MRR", "R@1", "R@5", "R@10", "Mean"];

/// Aligned plain-text table with a header row, one row per named entry.
pub fn format_table(header: &[&str], rows: &[(String, Vec<String>)]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for (name, cells) in rows {
        widths[0] = widths[0].max(name.len());
        for (i, c) in cells.iter().enumerate() {
            widths[i + 1] = widths[i + 1].max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}", w = widths[0]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = widths[i]));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    out.push_str(&line(header.to_vec()));
    for (name, cells) in rows {
        let mut all = vec![name.as_str()];
        all.extend(cells.iter().map(String::as_str));
        out.push_str(&line(all));
    }
    out
}

/// Metrics table with rows named by model.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut header = vec!["Model"];
    header.extend(TABLE_COLUMNS);
    let cells: Vec<(String, Vec<String>)> = rows.iter().map(|(n, m)| (n.clone(), m.table_cells().to_vec())).collect();
    format_table(&header, &cells)
}

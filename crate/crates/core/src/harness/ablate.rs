//! Matched-seed loss ablation and the (τ, γ) sweep.

use std::path::Path;

use serde::Serialize;

use super::config::{LossKind, RunConfig};
use super::evaluate::evaluate;
use super::train::{train, Prepared};
use crate::error::{Error, Result};
use crate::eval::{format_table, MetricsReport, TABLE_COLUMNS};

/// One trained arm, scored on the test split at its best validation epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmResult {
    pub seed: u64,
    pub loss: LossKind,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedPair {
    pub seed: u64,
    pub control: ArmResult,
    pub treatment: ArmResult,
}

/// Treatment minus control, in table units (recalls in percent).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Delta {
    pub mrr: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mean_rank: f64,
}

impl Delta {
    pub fn between(control: &MetricsReport, treatment: &MetricsReport) -> Self {
        Self {
            mrr: treatment.mrr - control.mrr,
            r1: 100.0 * (treatment.r1 - control.r1),
            r5: 100.0 * (treatment.r5 - control.r5),
            r10: 100.0 * (treatment.r10 - control.r10),
            mean_rank: treatment.mean_rank - control.mean_rank,
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.mrr, self.r1, self.r5, self.r10, self.mean_rank]
    }

    fn cells(&self) -> Vec<String> {
        let v = self.values();
        vec![
            format!("{:+.4}", v[0]),
            format!("{:+.2}", v[1]),
            format!("{:+.2}", v[2]),
            format!("{:+.2}", v[3]),
            format!("{:+.2}", v[4]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub pairs: Vec<SeedPair>,
}

pub const DELTA_COLUMNS: [&str; 5] = ["ΔMRR", "ΔR@1", "ΔR@5", "ΔR@10", "ΔMean"];

fn mean_report(reports: &[&MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let ndcg = if reports.iter().all(|r| r.ndcg.is_some()) {
        Some(avg(|r| r.ndcg.unwrap_or(0.0)))
    } else {
        None
    };
    MetricsReport {
        mrr: avg(|r| r.mrr),
        r1: avg(|r| r.r1),
        r5: avg(|r| r.r5),
        r10: avg(|r| r.r10),
        mean_rank: avg(|r| r.mean_rank),
        ndcg,
        rounds: reports.iter().map(|r| r.rounds).sum(),
    }
}

impl AblationReport {
    fn arm_names(&self) -> (String, String) {
        let Some(first) = self.pairs.first() else {
            return ("control".into(), "treatment".into());
        };
        let (c, t) = (first.control.loss.label(), first.treatment.loss.label());
        if c == t {
            (format!("{c} (control)"), format!("{t} (treatment)"))
        } else {
            (c.to_string(), t.to_string())
        }
    }

    pub fn deltas(&self) -> Vec<(u64, Delta)> {
        self.pairs
            .iter()
            .map(|p| (p.seed, Delta::between(&p.control.test, &p.treatment.test)))
            .collect()
    }

    pub fn mean_control(&self) -> MetricsReport {
        mean_report(&self.pairs.iter().map(|p| &p.control.test).collect::<Vec<_>>())
    }

    pub fn mean_treatment(&self) -> MetricsReport {
        mean_report(&self.pairs.iter().map(|p| &p.treatment.test).collect::<Vec<_>>())
    }

    /// Seeds where the treatment's mean rank is strictly lower.
    pub fn treatment_wins(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.treatment.test.mean_rank < p.control.test.mean_rank)
            .count()
    }

    /// Absolute rows (per seed, then the mean) and delta rows.
    fn rows(&self) -> (Vec<(String, Vec<String>)>, Vec<(String, Vec<String>)>) {
        let (cn, tn) = self.arm_names();
        let mut absolute = Vec::new();
        for p in &self.pairs {
            absolute.push((format!("{cn} seed {}", p.seed), p.control.test.table_cells().to_vec()));
            absolute.push((format!("{tn} seed {}", p.seed), p.treatment.test.table_cells().to_vec()));
        }
        absolute.push((format!("{cn} mean"), self.mean_control().table_cells().to_vec()));
        absolute.push((format!("{tn} mean"), self.mean_treatment().table_cells().to_vec()));

        let deltas = self.deltas();
        let mut delta_rows: Vec<(String, Vec<String>)> =
            deltas.iter().map(|(s, d)| (format!("{tn} - {cn} seed {s}"), d.cells())).collect();
        delta_rows.push((format!("{tn} - {cn} mean"), self.mean_delta().cells()));
        (absolute, delta_rows)
    }

    pub fn mean_delta(&self) -> Delta {
        let d = self.deltas();
        let n = d.len().max(1) as f64;
        let sum = |f: fn(&Delta) -> f64| d.iter().map(|(_, x)| f(x)).sum::<f64>() / n;
        Delta {
            mrr: sum(|x| x.mrr),
            r1: sum(|x| x.r1),
            r5: sum(|x| x.r5),
            r10: sum(|x| x.r10),
            mean_rank: sum(|x| x.mean_rank),
        }
    }

    /// Two aligned blocks: absolute values, then improvement over the control.
    pub fn to_text(&self) -> String {
        let (absolute, deltas) = self.rows();
        let mut header = vec!["Model"];
        header.extend(TABLE_COLUMNS);
        let mut out = format_table(&header, &absolute);
        out.push('\n');
        let mut header = vec!["Improvement"];
        header.extend(DELTA_COLUMNS);
        out.push_str(&format_table(&header, &deltas));
        out
    }

    /// Long-form CSV with one row per table line; `block` is `absolute` or `delta`.
    pub fn to_csv(&self) -> String {
        let (absolute, deltas) = self.rows();
        let mut out = String::from("block,row,mrr,r1,r5,r10,mean_rank\n");
        for (block, rows) in [("absolute", absolute), ("delta", deltas)] {
            for (name, cells) in rows {
                out.push_str(&format!("{block},{name},{}\n", cells.join(",")));
            }
        }
        out
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("ablation.csv"), self.to_csv())?;
        std::fs::write(out.join("ablation.txt"), self.to_text())?;
        std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn run_arm(config: &RunConfig, prepared: &Prepared, loss: LossKind, out: &Path) -> Result<ArmResult> {
    let mut cfg = config.clone();
    cfg.train.loss = loss;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let outcome = train(&cfg, prepared, out)?;
    let test = evaluate(&outcome.best_model, &prepared.test, cfg.train.length_normalize)?;
    Ok(ArmResult {
        seed: cfg.seed,
        loss,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        test: test.report,
    })
}

/// Trains an MLE control and a treatment arm per seed from the same
/// initialization and data order, then writes the comparison tables.
pub fn ablate(config: &RunConfig, out: &Path) -> Result<AblationReport> {
    if config.ablation.seeds.is_empty() {
        return Err(Error::Empty("ablation seeds"));
    }
    let mut pairs = Vec::with_capacity(config.ablation.seeds.len());
    for &seed in &config.ablation.seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let prepared = Prepared::new(&cfg)?;
        let dir = out.join(format!("seed-{seed}"));
        let control = run_arm(&cfg, &prepared, LossKind::Mle, &dir.join("control"))?;
        let treatment = run_arm(&cfg, &prepared, config.ablation.treatment, &dir.join("treatment"))?;
        pairs.push(SeedPair { seed, control, treatment });
    }
    let report = AblationReport { pairs };
    report.write(out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub gamma: f64,
    pub best_epoch: usize,
    pub val: MetricsReport,
}

/// Trains one WLE run per (τ, γ) grid point and reports validation metrics at
/// each run's best epoch.
pub fn sweep(config: &RunConfig, out: &Path) -> Result<Vec<SweepPoint>> {
    if config.sweep.taus.is_empty() || config.sweep.gammas.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let prepared = Prepared::new(config)?;
    let mut points = Vec::new();
    for &tau in &config.sweep.taus {
        for &gamma in &config.sweep.gammas {
            let mut cfg = config.clone();
            cfg.train.loss = LossKind::Wle;
            cfg.train.weights.tau = tau;
            cfg.train.weights.gamma = gamma;
            cfg.validate()?;
            let dir = out.join(format!("tau-{tau}_gamma-{gamma}"));
            let outcome = train(&cfg, &prepared, &dir)?;
            let val = outcome
                .best_val
                .ok_or_else(|| Error::InvalidArgument("sweep needs at least one epoch".into()))?;
            points.push(SweepPoint {
                tau,
                gamma,
                best_epoch: outcome.best_epoch,
                val,
            });
        }
    }
    let mut csv = String::from("tau,gamma,best_epoch,mrr,r1,r5,r10,mean_rank\n");
    let mut rows = Vec::new();
    for p in &points {
        let v = &p.val;
        csv.push_str(&format!(
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            p.tau, p.gamma, p.best_epoch, v.mrr, v.r1, v.r5, v.r10, v.mean_rank
        ));
        rows.push((format!("tau={} gamma={}", p.tau, p.gamma), v.table_cells().to_vec()));
    }
    let mut header = vec!["Setting"];
    header.extend(TABLE_COLUMNS);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), csv)?;
    std::fs::write(out.join("sweep.txt"), format_table(&header, &rows))?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::compute_metrics;

    fn arm(seed: u64, loss: LossKind, ranks: &[usize]) -> ArmResult {
        ArmResult {
            seed,
            loss,
            best_epoch: 1,
            epochs_run: 1,
            test: compute_metrics(ranks, 20).unwrap(),
        }
    }

    fn report() -> AblationReport {
        AblationReport {
            pairs: vec![
                SeedPair {
                    seed: 1,
                    control: arm(1, LossKind::Mle, &[1, 4, 9, 12]),
                    treatment: arm(1, LossKind::Wle, &[1, 2, 5, 12]),
                },
                SeedPair {
                    seed: 2,
                    control: arm(2, LossKind::Mle, &[2, 2, 2, 2]),
                    treatment: arm(2, LossKind::Wle, &[3, 2, 2, 2]),
                },
            ],
        }
    }

    #[test]
    fn deltas_and_wins() {
        let r = report();
        let d = r.deltas();
        assert_eq!(d[0].1.mean_rank, (20.0 - 26.0) / 4.0);
        assert_eq!(d[0].1.r5, 25.0);
        assert_eq!(d[1].1.mean_rank, 0.25);
        assert_eq!(r.treatment_wins(), 1);
        assert_eq!(r.mean_delta().mean_rank, (-1.5 + 0.25) / 2.0);
    }

    #[test]
    fn table_has_absolute_and_delta_blocks() {
        let text = report().to_text();
        let blocks: Vec<&str> = text.split("\n\n").collect();
        assert_eq!(blocks.len(), 2);
        assert!(blocks[0].starts_with("Model"));
        assert!(blocks[0].contains("WLE mean"));
        assert!(blocks[1].starts_with("Improvement"));
        assert!(blocks[1].contains("ΔMean"));
        assert!(blocks[1].contains("WLE - MLE seed 1"));
        assert!(blocks[1].contains("-1.50"));

        let csv = report().to_csv();
        assert_eq!(csv.lines().count(), 1 + 6 + 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn identical_arms_give_zero_deltas() {
        let mut r = report();
        for p in &mut r.pairs {
            p.treatment = ArmResult {
                loss: LossKind::Mle,
                ..p.control.clone()
            };
        }
        for (_, d) in r.deltas() {
            assert_eq!(d.values(), [0.0; 5]);
        }
        assert!(r.to_text().contains("MLE (treatment)"));
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wledial::harness::data::{load_splits, train_vocab, write_splits, Splits};
use wledial::harness::gradcheck::{run_gradcheck, DEFAULT_EPSILON, TOLERANCE};
use wledial::harness::{
    ablate, dump_attention, evaluate, rank_dialogue, run_chat, sweep, train, ChatSession, Checkpoint, Prepared,
    RunConfig,
};
use wledial::text::Vocabulary;

#[derive(Parser)]
#[command(name = "wledial", version, about = "Visual dialogue with adaptive multi-modal reasoning and WLE training")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic splits as VisDial JSON, feature files and a vocabulary.
    GenData,
    /// Train with the configured loss.
    Train {
        /// Also write per-sample WLE weights to weights.csv.
        #[arg(long)]
        weight_diagnostics: bool,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Matched-seed MLE vs WLE comparison, or the (tau, gamma) sweep.
    Ablate {
        #[arg(long)]
        sweep: bool,
    },
    /// Rank the candidates of every round of one dialogue.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogue: u64,
    },
    /// Write per-round, per-step attention weights for one dialogue.
    DumpAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogue: u64,
    },
    /// Ask questions about one dialogue's image.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogue: u64,
    },
    /// Finite-difference check of every primitive and of the full pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn load_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

/// Data for a checkpoint: from `--config` when given, else from the
/// checkpoint's own config. The vocabulary must match the checkpoint's.
fn checkpoint_data(global: &Global, ckpt: &Checkpoint) -> Result<(RunConfig, Splits, Vocabulary)> {
    let mut cfg = if global.config.is_some() {
        load_config(global)?
    } else {
        ckpt.config.clone()
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let splits = load_splits(&cfg.data, cfg.seed)?;
    let vocab = train_vocab(&splits, cfg.data.min_count)?;
    ckpt.check_vocab(&vocab)?;
    Ok((cfg, splits, vocab))
}

fn out_dir(global: &Global, fallback: &RunConfig) -> PathBuf {
    global.out.clone().unwrap_or_else(|| fallback.out_dir.clone())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match cli.command {
        Command::GenData => {
            let cfg = load_config(g)?;
            let splits = load_splits(&cfg.data, cfg.seed)?;
            let vocab = train_vocab(&splits, cfg.data.min_count)?;
            write_splits(&cfg.out_dir, &splits, &vocab)?;
            write_config(&cfg, &cfg.out_dir)?;
            println!(
                "wrote {} / {} / {} dialogues and {} vocabulary entries to {}",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                vocab.len(),
                cfg.out_dir.display()
            );
        }
        Command::Train { weight_diagnostics } => {
            let mut cfg = load_config(g)?;
            cfg.train.weight_diagnostics |= weight_diagnostics;
            write_config(&cfg, &cfg.out_dir)?;
            let prepared = Prepared::new(&cfg)?;
            let outcome = train(&cfg, &prepared, &cfg.out_dir)?;
            println!("epochs run: {}, best epoch: {}", outcome.epochs_run, outcome.best_epoch);
            if let Some(v) = &outcome.best_val {
                println!("{}", wledial::eval::metrics_table(&[("val".into(), v.clone())]));
            }
            println!("metrics: {}", outcome.metrics_csv.display());
            println!("best checkpoint: {}", outcome.best_checkpoint.display());
        }
        Command::Eval { checkpoint, split } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (cfg, splits, _) = checkpoint_data(g, &ckpt)?;
            let prepared = Prepared::from_splits(&cfg, splits)?;
            let rounds = prepared.rounds(&split)?;
            let result = evaluate(&ckpt.model, rounds, cfg.train.length_normalize)?;
            let out = out_dir(g, &cfg);
            std::fs::create_dir_all(&out)?;
            let csv = format!(
                "# config_hash={}\n{}\n{}\n",
                ckpt.config.hash(),
                wledial::eval::MetricsReport::CSV_HEADER,
                result.report.csv_row(ckpt.epoch, &split, Some(result.mean_nll))
            );
            std::fs::write(out.join(format!("eval_{split}.csv")), csv)?;
            std::fs::write(out.join(format!("eval_{split}.json")), serde_json::to_string_pretty(&result.report)?)?;
            println!("{}", wledial::eval::metrics_table(&[(split.clone(), result.report.clone())]));
            if let Some(n) = result.report.ndcg {
                println!("NDCG {n:.4} over {} rounds", result.report.rounds);
            }
        }
        Command::Ablate { sweep: do_sweep } => {
            let cfg = load_config(g)?;
            write_config(&cfg, &cfg.out_dir)?;
            if do_sweep {
                let points = sweep(&cfg, &cfg.out_dir)?;
                print!("{}", std::fs::read_to_string(cfg.out_dir.join("sweep.txt"))?);
                println!("{} settings; table in {}", points.len(), cfg.out_dir.join("sweep.csv").display());
            } else {
                let report = ablate(&cfg, &cfg.out_dir)?;
                print!("{}", report.to_text());
                println!(
                    "treatment mean rank lower in {} of {} seeds",
                    report.treatment_wins(),
                    report.pairs.len()
                );
            }
        }
        Command::Rank { checkpoint, dialogue } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (cfg, splits, vocab) = checkpoint_data(g, &ckpt)?;
            let rounds = rank_dialogue(
                &ckpt.model,
                &vocab,
                &cfg.data.max_lengths,
                &splits,
                dialogue,
                cfg.train.length_normalize,
            )?;
            let out = out_dir(g, &cfg);
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("rank_d{dialogue}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&rounds)?)?;
            for r in &rounds {
                println!("round {}: {}? (answer: {}, rank {})", r.round, r.question, r.answer, r.gt_rank);
                for c in r.candidates.iter().take(5) {
                    let mark = if c.ground_truth { "*" } else if c.relevant { "~" } else { " " };
                    println!("  {:>2}{mark} {:>9.4}  {}", c.rank, c.log_prob, c.text);
                }
            }
            println!("full ranking: {}", path.display());
        }
        Command::DumpAttn { checkpoint, dialogue } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (cfg, splits, vocab) = checkpoint_data(g, &ckpt)?;
            let dump = dump_attention(&ckpt.model, &vocab, &cfg.data.max_lengths, &splits, dialogue)?;
            let out = out_dir(g, &cfg);
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("attention_d{dialogue}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&dump)?)?;
            println!("{} rounds x {} steps written to {}", dump.rounds.len(), dump.i_max, path.display());
        }
        Command::Chat { checkpoint, dialogue } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (cfg, splits, vocab) = checkpoint_data(g, &ckpt)?;
            let (_, inst) = wledial::harness::find_dialogue(&splits, dialogue)?;
            println!("dialogue {dialogue}: {}", inst.caption);
            let mut session = ChatSession::new(&ckpt.model, &vocab, cfg.data.max_lengths.clone(), inst)?;
            let stdin = std::io::stdin();
            run_chat(&mut session, stdin.lock(), std::io::stdout())?;
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                bail!("--seeds must be positive");
            }
            let base = g.seed.unwrap_or(0);
            let list: Vec<u64> = (base..base + seeds).collect();
            let summary = run_gradcheck(&list, DEFAULT_EPSILON)?;
            if let Some(out) = &g.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("gradcheck.csv"), summary.to_csv())?;
            }
            println!("primitives, max elementwise relative error: {:.3e}", summary.primitive_max());
            println!("pipeline, max per-parameter relative error: {:.3e}", summary.pipeline_max_tensor());
            println!("pipeline, max elementwise relative error:   {:.3e}", summary.pipeline_max_element());
            if !summary.passed(TOLERANCE) {
                println!("FAILED (tolerance {TOLERANCE:e})");
                return Ok(ExitCode::FAILURE);
            }
            println!("passed (tolerance {TOLERANCE:e})");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

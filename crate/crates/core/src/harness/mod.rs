//! Orchestration: data preparation, training, evaluation, ablation and the
//! inspection tools behind the command-line interface.

pub mod ablate;
pub mod chat;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod gradcheck;
pub mod inspect;
pub mod train;

pub use ablate::{ablate, sweep, AblationReport, ArmResult, Delta, SeedPair, SweepPoint};
pub use chat::{run_chat, ChatReply, ChatSession};
pub use checkpoint::Checkpoint;
pub use config::{AblationConfig, DataConfig, LossKind, RunConfig, SweepConfig, TrainConfig};
pub use evaluate::{evaluate, Evaluation};
pub use gradcheck::{run_gradcheck, GradcheckSummary};
pub use inspect::{
    counting_probe, dump_attention, find_dialogue, rank_dialogue, square_attention_probe, AttentionDump, ProbeResult,
    RankedRound,
};
pub use train::{initial_model, train, train_step, Prepared, StepOutcome, TrainOutcome};

//! AdamW training loop with linear warmup, budgeted checkpoints, resume and
//! a per-checkpoint step/sample ledger.

mod config;
mod optim;
mod run;

pub use config::{Budget, Seeds, TrainConfig};
pub use optim::{lr_schedule, AdamState, AdamW};
pub use run::{read_ledger, read_log, tokenize_corpus, LedgerRow, LogRow, RunLedger, RunOutput, StepRecord, Trainer};

//! Frozen-embedding extraction, linear and KNN probes, cosine retrieval
//! and the evaluation metrics.

pub mod embed;
pub mod metrics;
pub mod probes;
pub mod retrieval;
pub mod tasks;

pub use embed::{embed, embed_checkpoint, load_store, save_store, EmbeddingMatrix, StoreManifest};
pub use metrics::{auc, average_ranks, f1_macro, spearman};
pub use probes::{fit, Predictions, Probe, ProbeKind, ProbeSpec, Standardizer, Targets};
pub use retrieval::recall_at_k;
pub use tasks::{append_results, evaluate_retrieval, evaluate_task, read_results, seed_spread, Metric, ProbeTask, TaskResult};

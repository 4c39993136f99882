//! Tokenization, corpus ingestion, MLM mask plans and batching.

mod batch;
pub mod ingest;
mod masking;
pub mod synth;
mod vocab;

pub use batch::{BatchSampler, TokenBatch};
pub use ingest::{read_fasta, read_labeled_csv, FastaReader, FastaRecord, LabeledRecord, Split};
pub use masking::{eligible, make_mask_plan, MaskAction, MaskPlan, MASK_FRACTION, RANDOM_FRACTION};
pub use vocab::{Tokenizer, Vocabulary, AMBIGUOUS, CANONICAL, CLS, EOS, MASK, PAD, UNK};

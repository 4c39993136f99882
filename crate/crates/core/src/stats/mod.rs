//! Paired comparison statistics: sign tests with tie exclusion, Wilcoxon
//! signed-rank tests, Holm adjustment and per-task scoreboards.

mod holm;
mod scoreboard;
mod sign;
mod wilcoxon;

pub use holm::{holm_bonferroni, holm_within};
pub use scoreboard::{
    apply_holm, delta_delta, paired_deltas, render_csv, render_table, scoreboard, task_scores, PairedDelta, Scoreboard, Selection, TaskScores,
};
pub use sign::{binomial_upper_tail, sign_test, sign_test_counts, SignTest, TIE_THRESHOLD};
pub use wilcoxon::{wilcoxon_signed_rank, Wilcoxon, EXACT_MAX_N};

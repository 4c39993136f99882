use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::batch::TokenBatch;
use super::vocab::{Vocabulary, MASK};
use crate::error::{Error, Result};

/// Fractions of selected positions replaced by MASK and by a random residue;
/// the remainder keeps its token.
pub const MASK_FRACTION: f64 = 0.8;
pub const RANDOM_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    None,
    Mask,
    Random,
    Keep,
}

/// Per-position corruption record for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// One entry per grid position of the batch.
    pub actions: Vec<MaskAction>,
    pub corrupted: Vec<usize>,
    /// Flat grid indices of selected positions, ascending.
    pub positions: Vec<usize>,
    /// Original ids at `positions`.
    pub originals: Vec<usize>,
    /// Set when the batch had no eligible position; position-wise losses
    /// must then be skipped.
    pub no_eligible: bool,
}

impl MaskPlan {
    pub fn n_selected(&self) -> usize {
        self.positions.len()
    }
}

/// Positions that may be corrupted: real residues (canonical or ambiguity
/// codes), never padding, framing, UNK or an already-masked input.
pub fn eligible(batch: &TokenBatch, i: usize) -> bool {
    batch.attention_mask[i] && Vocabulary.is_residue(batch.ids[i])
}

/// Independent Bernoulli(`mask_rate`) selection per eligible position, then
/// an 80/10/10 MASK/RANDOM/KEEP split of the selected ones.
pub fn make_mask_plan(batch: &TokenBatch, mask_rate: f64, seed: u64) -> Result<MaskPlan> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask_rate must lie in (0, 1), got {mask_rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical = Vocabulary.canonical_ids();
    let n = batch.ids.len();
    let mut actions = vec![MaskAction::None; n];
    let mut corrupted = batch.ids.clone();
    let mut positions = Vec::new();
    let mut originals = Vec::new();
    let mut any_eligible = false;
    for i in 0..n {
        if !eligible(batch, i) {
            continue;
        }
        any_eligible = true;
        if rng.random::<f64>() >= mask_rate {
            continue;
        }
        let u: f64 = rng.random();
        actions[i] = if u < MASK_FRACTION {
            corrupted[i] = MASK;
            MaskAction::Mask
        } else if u < MASK_FRACTION + RANDOM_FRACTION {
            corrupted[i] = rng.random_range(canonical.clone());
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        positions.push(i);
        originals.push(batch.ids[i]);
    }
    Ok(MaskPlan {
        actions,
        corrupted,
        positions,
        originals,
        no_eligible: !any_eligible,
    })
}

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::evalsuite::average_ranks;

/// Largest sample size evaluated by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Nonzero deltas used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W⁺, W⁻)`
    pub statistic: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Paired two-sided signed-rank test. Zeros are dropped and tied
/// magnitudes share average ranks.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<Wilcoxon> {
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite delta".into()));
    }
    let nz: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n < 2 {
        return Err(Error::Undefined(format!("wilcoxon needs 2 nonzero deltas, got {n}")));
    }
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, statistic), true)
    } else {
        (normal_p(&ranks, statistic), false)
    };
    Ok(Wilcoxon {
        n,
        w_plus,
        w_minus,
        statistic,
        p,
        exact,
    })
}

/// `2·P(W⁺ ≤ w)` under random signs, counted over doubled ranks so that
/// half-integer ranks stay integral.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (2.0 * w).round() as usize;
    let below: u64 = counts[..=limit].iter().sum();
    (2.0 * below as f64 / 2f64.powi(ranks.len() as i32)).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.sf(z)).min(1.0)
}

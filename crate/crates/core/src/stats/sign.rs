use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

/// Deltas with `|Δ| <` this are ties.
pub const TIE_THRESHOLD: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided `P(X ≥ wins)` under Binomial(wins + losses, 1/2); `None`
    /// when every delta is a tie.
    pub p: Option<f64>,
}

fn binom(n: u32, k: u32) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// `Σ_{k=w}^{n} C(n,k) / 2ⁿ`, with integer-exact coefficients up to n = 64.
pub fn binomial_upper_tail(w: usize, n: usize) -> f64 {
    if w == 0 {
        return 1.0;
    }
    if w > n {
        return 0.0;
    }
    if n <= 64 {
        let (w, n) = (w as u32, n as u32);
        let total: u128 = (w..=n).map(|k| binom(n, k)).sum();
        return total as f64 / 2f64.powi(n as i32);
    }
    let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
    dist.sf(w as u64 - 1)
}

/// Sign test from counts.
pub fn sign_test_counts(wins: usize, losses: usize, ties: usize) -> SignTest {
    let n = wins + losses;
    SignTest {
        wins,
        losses,
        ties,
        p: (n > 0).then(|| binomial_upper_tail(wins, n)),
    }
}

/// Wins are `Δ ≥ τ`, losses `Δ ≤ −τ`, the rest ties.
pub fn sign_test(deltas: &[f64]) -> SignTest {
    let wins = deltas.iter().filter(|&&d| d >= TIE_THRESHOLD).count();
    let losses = deltas.iter().filter(|&&d| d <= -TIE_THRESHOLD).count();
    sign_test_counts(wins, losses, deltas.len() - wins - losses)
}

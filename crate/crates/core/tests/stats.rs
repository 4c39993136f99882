mod oracles;

use mlmjepa::stats::{holm_bonferroni, sign_test_counts, wilcoxon_signed_rank};
use oracles::{holm_oracle, wilcoxon_brute};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn three_sig(x: f64) -> f64 {
    let mag = 10f64.powi(x.abs().log10().floor() as i32 - 2);
    (x / mag).round() * mag
}

#[test]
fn reference_sign_test_p_values() {
    for (w, l, t, p) in [(10, 3, 3, 0.0461), (11, 2, 3, 0.0112), (6, 8, 2, 0.788), (11, 4, 1, 0.0592)] {
        let got = sign_test_counts(w, l, t).p.unwrap();
        assert_eq!(three_sig(got), p, "{w}/{l}/{t}: {got}");
    }
    assert!(sign_test_counts(60, 10, 0).p.unwrap() < 1e-6);
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..20 {
        let n = rng.random_range(2..=12);
        // coarse grid values give tied magnitudes and zeros
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-6i32..=6) as f64 * 0.25).collect();
        if d.iter().filter(|x| **x != 0.0).count() < 2 {
            continue;
        }
        let got = wilcoxon_signed_rank(&d).unwrap();
        assert!(got.exact);
        assert!((got.p - wilcoxon_brute(&d)).abs() < 1e-12, "instance {instance}: {d:?}");
    }
}

#[test]
fn wilcoxon_twelve_random_deltas() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert!((wilcoxon_signed_rank(&d).unwrap().p - wilcoxon_brute(&d)).abs() < 1e-12);
}

#[test]
fn holm_over_fifteen_cells_matches_step_down_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p: Vec<f64> = (0..15).map(|_| rng.random_range(1e-5..0.3)).collect();
    let got = holm_bonferroni(&p).unwrap();
    for (a, b) in got.iter().zip(holm_oracle(&p)) {
        assert!((a - b).abs() < 1e-15);
    }
}

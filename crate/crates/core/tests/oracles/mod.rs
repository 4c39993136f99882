//! Independent brute-force reference implementations used by the
//! integration and acceptance tests.
#![allow(dead_code)]

/// Rank of `x[i]`: 1 + #smaller + half the other equal values.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let smaller = x.iter().filter(|&&v| v < x[i]).count() as f64;
            let equal = x.iter().filter(|&&v| v == x[i]).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub fn brute_f1(preds: &[usize], labels: &[usize]) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let mut sum = 0.0;
    for &c in &classes {
        let tp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l == c).count() as f64;
        let predicted = preds.iter().filter(|p| **p == c).count() as f64;
        let actual = labels.iter().filter(|l| **l == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / actual;
        sum += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    sum / classes.len() as f64
}

/// KNN by repeated minimum extraction over all distances.
pub fn knn_classify(train: &[Vec<f64>], labels: &[usize], n_classes: usize, q: &[f64], k: usize) -> usize {
    let dist: Vec<f64> = train
        .iter()
        .map(|t| t.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let mut taken = vec![false; train.len()];
    let mut votes = vec![0usize; n_classes];
    for _ in 0..k.min(train.len()) {
        let mut best: Option<usize> = None;
        for i in 0..train.len() {
            if !taken[i] && best.is_none_or(|b| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        votes[labels[b]] += 1;
    }
    let max = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == max).unwrap()
}

/// Recall@k by computing, for each query, the 0-based rank of every
/// gallery item (count of items strictly ahead of it).
pub fn recall_oracle(x: &[Vec<f64>], labels: &[&str], k: usize) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let n = x.len();
    let mut hits = 0;
    for q in 0..n {
        let sims: Vec<f64> = (0..n).map(|j| cos(&x[q], &x[j])).collect();
        let hit = (0..n).filter(|&j| j != q && labels[j] == labels[q]).any(|j| {
            let ahead = (0..n)
                .filter(|&o| o != q && o != j)
                .filter(|&o| sims[o] > sims[j] || (sims[o] == sims[j] && o < j))
                .count();
            ahead < k
        });
        hits += usize::from(hit);
    }
    hits as f64 / n as f64
}

/// Two-sided Wilcoxon p by enumerating all 2ⁿ sign assignments of the
/// (average-tied) ranks of the nonzero |Δ|.
pub fn wilcoxon_brute(deltas: &[f64]) -> f64 {
    let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    let ranks = brute_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w = w_plus.min(total - w_plus);
    let n = nz.len();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= w + 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

/// Holm by explicit step-down loop over sorted positions.
pub fn holm_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap());
    let mut adj = vec![0.0; m];
    for (rank, &i) in idx.iter().enumerate() {
        let mut v: f64 = 0.0;
        for (r2, &j) in idx.iter().enumerate().take(rank + 1) {
            v = v.max((m - r2) as f64 * p[j]);
        }
        adj[i] = v.min(1.0);
    }
    adj
}

/// Binary logistic regression `mean log(1 + e^{−s(x·w + b)}) + c‖w‖²` by
/// Newton's method with a dense solve. Returns P(y = 1) for `eval`.
pub fn newton_logistic(x: &[Vec<f64>], y: &[bool], c: f64, eval: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut theta = vec![0.0; d + 1];
    let aug = |r: &[f64]| -> Vec<f64> { r.iter().copied().chain(std::iter::once(1.0)).collect() };
    for _ in 0..100 {
        let mut g = vec![0.0; d + 1];
        let mut h = vec![vec![0.0; d + 1]; d + 1];
        for (r, &yi) in x.iter().zip(y) {
            let a = aug(r);
            let z: f64 = a.iter().zip(&theta).map(|(u, v)| u * v).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let t = if yi { 1.0 } else { 0.0 };
            for i in 0..=d {
                g[i] += (p - t) * a[i] / n;
                for j in 0..=d {
                    h[i][j] += p * (1.0 - p) * a[i] * a[j] / n;
                }
            }
        }
        for i in 0..d {
            g[i] += 2.0 * c * theta[i];
            h[i][i] += 2.0 * c;
        }
        let step = solve(h, g);
        for (t, s) in theta.iter_mut().zip(&step) {
            *t -= s;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
    }
    eval.iter()
        .map(|r| {
            let z: f64 = aug(r).iter().zip(&theta).map(|(u, v)| u * v).sum();
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ridge `(1/n)‖y − Xw − b‖² + λ‖w‖²` by plain gradient descent.
pub fn ridge_gd(x: &[Vec<f64>], y: &[f64], lambda: f64, eval: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let lr = 0.05;
    for _ in 0..200_000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &t) in x.iter().zip(y) {
            let e = r.iter().zip(&w).map(|(u, v)| u * v).sum::<f64>() + b - t;
            for i in 0..d {
                gw[i] += 2.0 * e * r[i] / n;
            }
            gb += 2.0 * e / n;
        }
        for i in 0..d {
            gw[i] += 2.0 * lambda * w[i];
            w[i] -= lr * gw[i];
        }
        b -= lr * gb;
        if gw.iter().chain(std::iter::once(&gb)).all(|g| g.abs() < 1e-13) {
            break;
        }
    }
    eval.iter().map(|r| r.iter().zip(&w).map(|(u, v)| u * v).sum::<f64>() + b).collect()
}

/// z-score columns with training statistics (population variance).
pub fn standardize(train: &[Vec<f64>], rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = train[0].len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (train.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    rows.iter()
        .map(|r| (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect())
        .collect()
}

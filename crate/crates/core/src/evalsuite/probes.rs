use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_K: usize = 20;
pub const RIDGE_LAMBDA: f64 = 1e-3;
pub const LOGISTIC_L2: f64 = 1e-3;
pub const LOGISTIC_TOL: f64 = 1e-7;
pub const LOGISTIC_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    LinearClassifier,
    LinearRegressor,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub seed: u64,
    /// Neighbour count for KNN, capped at the training-set size.
    pub k: usize,
    /// L2 strength for linear probes on standardized features.
    pub l2: f64,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind, seed: u64) -> Self {
        let l2 = match kind {
            ProbeKind::LinearRegressor => RIDGE_LAMBDA,
            _ => LOGISTIC_L2,
        };
        ProbeSpec {
            kind,
            seed,
            k: DEFAULT_K,
            l2,
        }
    }
}

/// Targets of a probe task: class ids or real values.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { ids: Vec<usize>, n_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { ids, .. } => ids.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Probe output per query: class probabilities (row-major `n × C`) or values.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Scores { probs: Vec<f64>, n_classes: usize },
    Values(Vec<f64>),
}

impl Predictions {
    /// Arg-max class per row, lower class id on ties.
    pub fn classes(&self) -> Option<Vec<usize>> {
        match self {
            Predictions::Scores { probs, n_classes } => Some(
                probs
                    .chunks(*n_classes)
                    .map(|row| {
                        let mut best = 0;
                        for (c, &p) in row.iter().enumerate() {
                            if p > row[best] {
                                best = c;
                            }
                        }
                        best
                    })
                    .collect(),
            ),
            Predictions::Values(_) => None,
        }
    }
}

/// Per-dimension z-score fitted on training rows; constant dimensions keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], dim: usize) -> Self {
        let n = (x.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in x.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for row in x.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.scale[i % d])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Logistic { w: Vec<f64>, b: Vec<f64>, n_classes: usize },
    Ridge { w: Vec<f64>, b: f64 },
    Knn { x: Vec<f64>, targets: Targets, k: usize },
}

/// Fitted probe over embeddings of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    dim: usize,
    standardizer: Option<Standardizer>,
    model: Model,
    /// Iterations used by the logistic solver.
    pub iterations: usize,
}

fn check_inputs(x: &[f64], dim: usize, y: &Targets) -> Result<usize> {
    if dim == 0 || x.len() % dim != 0 || x.len() / dim != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature values of width {dim} for {} targets",
            x.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    Ok(y.len())
}

/// Fits a probe. Classification probes need at least two training classes;
/// the error names `task`.
pub fn fit(task: &str, x: &[f64], dim: usize, y: &Targets, spec: &ProbeSpec) -> Result<Probe> {
    let n = check_inputs(x, dim, y)?;
    if let Targets::Classes { ids, n_classes } = y {
        if ids.iter().any(|&c| c >= *n_classes) {
            return Err(Error::InvalidArgument("class id out of range".into()));
        }
        let first = ids[0];
        if spec.kind != ProbeKind::Knn && ids.iter().all(|&c| c == first) {
            return Err(Error::SingleClass { task: task.into() });
        }
    }
    match (spec.kind, y) {
        (ProbeKind::Knn, _) => Ok(Probe {
            dim,
            standardizer: None,
            model: Model::Knn {
                x: x.to_vec(),
                targets: y.clone(),
                k: spec.k.clamp(1, n),
            },
            iterations: 0,
        }),
        (ProbeKind::LinearClassifier, Targets::Classes { ids, n_classes }) => {
            let st = Standardizer::fit(x, dim);
            let xs = st.apply(x);
            let (w, b, iterations) = fit_logistic(&xs, dim, ids, *n_classes, spec.l2, spec.seed)?;
            Ok(Probe {
                dim,
                standardizer: Some(st),
                model: Model::Logistic {
                    w,
                    b,
                    n_classes: *n_classes,
                },
                iterations,
            })
        }
        (ProbeKind::LinearRegressor, Targets::Values(v)) => {
            if n < 3 {
                return Err(Error::InvalidArgument(format!("task `{task}`: regression needs at least 3 points")));
            }
            let st = Standardizer::fit(x, dim);
            let xs = st.apply(x);
            let (w, b) = fit_ridge(&xs, dim, v, spec.l2)?;
            Ok(Probe {
                dim,
                standardizer: Some(st),
                model: Model::Ridge { w, b },
                iterations: 0,
            })
        }
        (kind, _) => Err(Error::Config(format!("task `{task}`: probe {kind:?} does not match the target type"))),
    }
}

impl Probe {
    pub fn predict(&self, x: &[f64]) -> Result<Predictions> {
        if x.len() % self.dim != 0 {
            return Err(Error::InvalidArgument(format!("{} values are not rows of width {}", x.len(), self.dim)));
        }
        let xs = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let d = self.dim;
        Ok(match &self.model {
            Model::Logistic { w, b, n_classes } => Predictions::Scores {
                probs: softmax_rows(&logits(&xs, d, w, b, *n_classes), *n_classes),
                n_classes: *n_classes,
            },
            Model::Ridge { w, b } => Predictions::Values(
                xs.chunks(d)
                    .map(|r| b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
                    .collect(),
            ),
            Model::Knn { x: train, targets, k } => knn_predict(train, targets, &xs, d, *k),
        })
    }
}

fn logits(x: &[f64], d: usize, w: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / d * c);
    for row in x.chunks(d) {
        for (k, bk) in b.iter().enumerate() {
            out.push(bk + row.iter().enumerate().map(|(j, v)| v * w[j * c + k]).sum::<f64>());
        }
    }
    out
}

fn softmax_rows(z: &[f64], c: usize) -> Vec<f64> {
    let mut out = z.to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Gradient of mean cross-entropy + `l2/2 · ‖W‖²` (bias unpenalized).
fn logistic_grad(x: &[f64], d: usize, y: &[usize], c: usize, l2: f64, w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len() as f64;
    let mut p = softmax_rows(&logits(x, d, w, b, c), c);
    for (row, &yi) in p.chunks_mut(c).zip(y) {
        row[yi] -= 1.0;
    }
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    let mut gb = vec![0.0; c];
    for (row, r) in x.chunks(d).zip(p.chunks(c)) {
        for (j, xv) in row.iter().enumerate() {
            for k in 0..c {
                gw[j * c + k] += xv * r[k] / n;
            }
        }
        gb.iter_mut().zip(r).for_each(|(g, v)| *g += v / n);
    }
    (gw, gb)
}

/// Largest eigenvalue of `X̃ᵀX̃ / n` with `X̃ = [X, 1]`, by power iteration.
fn gram_spectral_bound(x: &[f64], d: usize) -> f64 {
    let n = (x.len() / d) as f64;
    let mut v = vec![1.0; d + 1];
    let mut lambda = 1.0;
    for _ in 0..200 {
        let mut out = vec![0.0; d + 1];
        for row in x.chunks(d) {
            let s = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
            for (o, a) in out.iter_mut().zip(row.iter().chain(std::iter::once(&1.0))) {
                *o += s * a / n;
            }
        }
        let norm = out.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = out.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

/// Multinomial logistic regression by full-batch accelerated gradient
/// descent with step `1/L`; stops when the largest gradient entry falls
/// below [`LOGISTIC_TOL`] or after [`LOGISTIC_MAX_ITER`] iterations.
fn fit_logistic(x: &[f64], d: usize, y: &[usize], c: usize, l2: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut rng = seeds::rng(seed, seeds::tag::PROBE, 0);
    let init = Normal::new(0.0, 0.01).expect("finite std");
    let mut w: Vec<f64> = (0..d * c).map(|_| init.sample(&mut rng)).collect();
    let mut b = vec![0.0; c];
    let lip = 0.5 * gram_spectral_bound(x, d) * 1.05 + l2;
    let step = 1.0 / lip;
    let kappa = lip / l2.max(1e-12);
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let (mut w_prev, mut b_prev) = (w.clone(), b.clone());
    for it in 0..LOGISTIC_MAX_ITER {
        let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + momentum * (a - p)).collect();
        let yb: Vec<f64> = b.iter().zip(&b_prev).map(|(a, p)| a + momentum * (a - p)).collect();
        let (gw, gb) = logistic_grad(x, d, y, c, l2, &yw, &yb);
        w_prev = std::mem::replace(&mut w, yw.iter().zip(&gw).map(|(a, g)| a - step * g).collect());
        b_prev = std::mem::replace(&mut b, yb.iter().zip(&gb).map(|(a, g)| a - step * g).collect());
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "logistic probe".into(),
            });
        }
        let (gw, gb) = logistic_grad(x, d, y, c, l2, &w, &b);
        let gmax = gw.iter().chain(&gb).fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < LOGISTIC_TOL {
            return Ok((w, b, it + 1));
        }
    }
    Ok((w, b, LOGISTIC_MAX_ITER))
}

/// Ridge regression `min (1/n)‖y − Xw − b‖² + λ‖w‖²`, intercept unpenalized,
/// solved in closed form on centred data.
fn fit_ridge(x: &[f64], d: usize, y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, d, x);
    let ym = DVector::from_column_slice(y);
    let x_mean = xm.row_mean();
    let y_mean = ym.mean();
    let mut xc = xm.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = ym.add_scalar(-y_mean);
    let mut a = xc.transpose() * &xc / n as f64;
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let rhs = xc.transpose() * yc / n as f64;
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite { op: "ridge solve".into() })?,
    };
    let b = y_mean - (x_mean * &w)[(0, 0)];
    Ok((w.iter().copied().collect(), b))
}

/// Indices of the `k` nearest training rows by Euclidean distance, lower
/// index first on equal distance.
pub fn nearest(train: &[f64], query: &[f64], d: usize, k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = train
        .chunks(d)
        .enumerate()
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.into_iter().take(k).map(|(_, i)| i).collect()
}

fn knn_predict(train: &[f64], targets: &Targets, x: &[f64], d: usize, k: usize) -> Predictions {
    match targets {
        Targets::Classes { ids, n_classes } => {
            let mut probs = Vec::with_capacity(x.len() / d * n_classes);
            for q in x.chunks(d) {
                let mut votes = vec![0.0; *n_classes];
                for i in nearest(train, q, d, k) {
                    votes[ids[i]] += 1.0;
                }
                probs.extend(votes.iter().map(|v| v / k as f64));
            }
            Predictions::Scores {
                probs,
                n_classes: *n_classes,
            }
        }
        Targets::Values(v) => Predictions::Values(
            x.chunks(d)
                .map(|q| nearest(train, q, d, k).iter().map(|&i| v[i]).sum::<f64>() / k as f64)
                .collect(),
        ),
    }
}

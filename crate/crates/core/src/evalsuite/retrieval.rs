use crate::error::{Error, Result};

fn unit_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Recall@k with every item as query and the rest as gallery, ranked by
/// cosine similarity (lower index first on ties). Queries whose label
/// occurs once count as misses.
pub fn recall_at_k(x: &[f64], d: usize, labels: &[String], k: usize) -> Result<f64> {
    let n = labels.len();
    if d == 0 || x.len() != n * d {
        return Err(Error::InvalidArgument(format!("{} values for {n} items of width {d}", x.len())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("retrieval needs at least 2 items".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..{n}")));
    }
    let u = unit_rows(x, d);
    let mut hits = 0usize;
    for q in 0..n {
        let qv = &u[q * d..(q + 1) * d];
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (u[j * d..(j + 1) * d].iter().zip(qv).map(|(a, b)| a * b).sum(), j))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if ranked.iter().take(k).any(|&(_, j)| labels[j] == labels[q]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

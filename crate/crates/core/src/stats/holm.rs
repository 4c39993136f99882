use crate::error::{Error, Result};

/// Holm step-down adjustment over `p.len()` cells; output is in input order.
pub fn holm_bonferroni(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside (0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max((m - j) as f64 * p[i]);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

/// Holm adjustment of `p` as `p.len()` of `m` cells, the unlisted cells
/// taken as p = 1 (the least favourable completion).
pub fn holm_within(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p.len() {
        return Err(Error::InvalidArgument(format!("m = {m} is below the {} listed p-values", p.len())));
    }
    let mut full = p.to_vec();
    full.resize(m, 1.0);
    let mut adj = holm_bonferroni(&full)?;
    adj.truncate(p.len());
    Ok(adj)
}

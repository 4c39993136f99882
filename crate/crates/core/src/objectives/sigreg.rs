//! Sketched isotropic Gaussian regularizer: random 1-D projections of a
//! sample matched to the standard normal's first four moments.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Var};
use crate::seeds;

/// `dim × n` matrix whose columns are unit directions.
pub fn projection_directions(dim: usize, n: usize, seed: u64, counter: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed, seeds::tag::PROJECTION, counter);
    let mut u: Vec<f64> = (0..dim * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    for k in 0..n {
        let norm = (0..dim).map(|d| u[d * n + k].powi(2)).sum::<f64>().sqrt();
        for d in 0..dim {
            u[d * n + k] /= norm;
        }
    }
    u
}

/// Per-projection penalty `m² + (s − 1)² + skew²/6 + exkurt²/24`, averaged
/// over projections. Statistics are taken over the sample axis.
///
/// Returns the penalty and the mean per-projection standard deviation.
pub fn sigreg(g: &mut Graph, x: Var, directions: &[f64], eps: f64) -> Result<(Var, f64)> {
    let shape = g.shape(x).to_vec();
    let [n, dim] = shape[..] else {
        return Err(Error::shape("sigreg", format!("expected a matrix, got {shape:?}")));
    };
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sigreg needs at least 2 samples, got {n}")));
    }
    if directions.is_empty() || directions.len() % dim != 0 {
        return Err(Error::shape("sigreg", format!("{} direction values for dim {dim}", directions.len())));
    }
    let k = directions.len() / dim;
    let u = g.constant(&[dim, k], directions.to_vec())?;
    let z = g.matmul(x, u)?;
    let mean = g.mean_axis(z, 0)?;
    let var = g.variance(z, 0)?;
    let var = g.add_scalar(var, eps)?;
    let std = g.sqrt(var)?;
    let neg_mean = g.scale(mean, -1.0)?;
    let centered = g.add_row(z, neg_mean)?;
    let inv_std = g.pow(std, -1.0)?;
    let y = g.mul_row(centered, inv_std)?;
    let y2 = g.mul(y, y)?;
    let y3 = g.mul(y2, y)?;
    let y4 = g.mul(y2, y2)?;
    let skew = g.mean_axis(y3, 0)?;
    let kurt = g.mean_axis(y4, 0)?;
    let exkurt = g.add_scalar(kurt, -3.0)?;

    let m2 = g.mul(mean, mean)?;
    let s1 = g.add_scalar(std, -1.0)?;
    let s2 = g.mul(s1, s1)?;
    let sk2 = g.mul(skew, skew)?;
    let sk2 = g.scale(sk2, 1.0 / 6.0)?;
    let ku2 = g.mul(exkurt, exkurt)?;
    let ku2 = g.scale(ku2, 1.0 / 24.0)?;
    let total = g.add(m2, s2)?;
    let total = g.add(total, sk2)?;
    let total = g.add(total, ku2)?;
    let penalty = g.mean(total)?;
    let mean_std = g.value(std).iter().sum::<f64>() / k as f64;
    Ok((penalty, mean_std))
}

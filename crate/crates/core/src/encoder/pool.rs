use crate::error::{Error, Result};
use crate::seqdata::{TokenBatch, Vocabulary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolOptions {
    /// Average over CLS/EOS as well as residues.
    pub include_special: bool,
    /// L2-normalize each pooled vector.
    pub l2_normalize: bool,
}

/// Mean over real positions of each sequence in a `(batch · len) × hidden`
/// grid. Returns `batch × hidden` row-major.
pub fn mean_pool(hidden: &[f64], batch: &TokenBatch, width: usize, opts: PoolOptions) -> Result<Vec<f64>> {
    if hidden.len() != batch.batch * batch.len * width {
        return Err(Error::shape(
            "mean_pool",
            format!("{} values for {}x{}x{width}", hidden.len(), batch.batch, batch.len),
        ));
    }
    let vocab = Vocabulary;
    let mut out = vec![0.0; batch.batch * width];
    for b in 0..batch.batch {
        let acc = &mut out[b * width..(b + 1) * width];
        let mut n = 0usize;
        for i in 0..batch.len {
            let r = b * batch.len + i;
            if !batch.attention_mask[r] || (!opts.include_special && vocab.is_special(batch.ids[r])) {
                continue;
            }
            n += 1;
            for (a, h) in acc.iter_mut().zip(&hidden[r * width..(r + 1) * width]) {
                *a += h;
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument(format!("sequence {b} has no positions to pool")));
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        if opts.l2_normalize {
            let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                acc.iter_mut().for_each(|a| *a /= norm);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{CLS, EOS};

    fn batch() -> TokenBatch {
        TokenBatch::from_sequences(&[vec![CLS, 5, 6, EOS], vec![CLS, 7, EOS]], 16).unwrap()
    }

    #[test]
    fn excludes_padding_and_specials() {
        let b = batch();
        let hidden: Vec<f64> = (0..8).map(|r| (r * r) as f64).collect();
        let out = mean_pool(&hidden, &b, 1, PoolOptions::default()).unwrap();
        assert_eq!(out, vec![2.5, 25.0]);
        let with = mean_pool(
            &hidden,
            &b,
            1,
            PoolOptions {
                include_special: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(with, vec![3.5, 77.0 / 3.0]);
    }

    #[test]
    fn normalizes_and_rejects_empty_rows() {
        let b = TokenBatch::from_sequences(&[vec![5, 6]], 8).unwrap();
        let out = mean_pool(
            &[3.0, 0.0, 3.0, 8.0],
            &b,
            2,
            PoolOptions {
                l2_normalize: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);
        let specials = TokenBatch::from_sequences(&[vec![CLS, EOS]], 8).unwrap();
        assert!(mean_pool(&[1.0, 2.0], &specials, 1, PoolOptions::default()).is_err());
    }
}

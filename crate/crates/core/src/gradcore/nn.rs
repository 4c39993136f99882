//! Fused operations for sequence models: lookups, masked attention, rotary
//! position encoding, depthwise convolution and token cross-entropy.
//!
//! Sequence tensors are laid out as `(batch · len) × width` matrices.

use super::{kernels, Graph, Op, Var};
use crate::error::{Error, Result};

/// Geometry and masking for one attention call.
#[derive(Debug, Clone)]
pub struct AttentionLayout {
    pub batch: usize,
    pub len: usize,
    pub n_heads: usize,
    /// Keys farther than this many positions from the query are masked out.
    pub window: Option<usize>,
    /// `batch · len` flags; `false` marks padding.
    pub key_mask: Vec<bool>,
}

impl AttentionLayout {
    #[inline]
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_mask[b * self.len + j] && self.window.is_none_or(|w| i.abs_diff(j) <= w)
    }
}

pub(crate) fn scatter_rows(g: &[f64], rows: &[usize], w: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (r, grow) in rows.iter().zip(g.chunks_exact(w)) {
        for (o, v) in out[r * w..(r + 1) * w].iter_mut().zip(grow) {
            *o += v;
        }
    }
    out
}

pub(crate) fn cross_entropy_backward(probs: &[f64], targets: &[usize], w: usize, g: f64) -> Vec<f64> {
    let m = targets.len() as f64;
    let mut out: Vec<f64> = probs.iter().map(|p| p * g / m).collect();
    for (r, &t) in targets.iter().enumerate() {
        out[r * w + t] -= g / m;
    }
    out
}

fn gather_head(x: &[f64], b: usize, len: usize, h: usize, off: usize, dh: usize, buf: &mut [f64]) {
    for i in 0..len {
        let src = (b * len + i) * h + off;
        buf[i * dh..(i + 1) * dh].copy_from_slice(&x[src..src + dh]);
    }
}

fn scatter_head(buf: &[f64], b: usize, len: usize, h: usize, off: usize, dh: usize, x: &mut [f64]) {
    for i in 0..len {
        let dst = (b * len + i) * h + off;
        for (o, v) in x[dst..dst + dh].iter_mut().zip(&buf[i * dh..(i + 1) * dh]) {
            *o += v;
        }
    }
}

pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    g: &[f64],
    layout: &AttentionLayout,
    needs: [bool; 3],
) -> [Option<Vec<f64>>; 3] {
    let (len, nh) = (layout.len, layout.n_heads);
    let h = q.len() / (layout.batch * len);
    let dh = h / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let block = len * dh;
    let (mut qb, mut kb, mut vb, mut gb) = (vec![0.0; block], vec![0.0; block], vec![0.0; block], vec![0.0; block]);
    let mut ds = vec![0.0; len * len];
    let mut tmp = vec![0.0; block];
    for b in 0..layout.batch {
        for head in 0..nh {
            let off = head * dh;
            let p = &probs[(b * nh + head) * len * len..][..len * len];
            gather_head(g, b, len, h, off, dh, &mut gb);
            if needs[2] {
                tmp.fill(0.0);
                kernels::gemm_tn(p, &gb, &mut tmp, len, len, dh);
                scatter_head(&tmp, b, len, h, off, dh, &mut dv);
            }
            if !(needs[0] || needs[1]) {
                continue;
            }
            gather_head(v, b, len, h, off, dh, &mut vb);
            ds.fill(0.0);
            kernels::gemm_nt(&gb, &vb, &mut ds, len, dh, len);
            for (dsr, pr) in ds.chunks_exact_mut(len).zip(p.chunks_exact(len)) {
                let s: f64 = dsr.iter().zip(pr).map(|(d, p)| d * p).sum();
                for (d, &pv) in dsr.iter_mut().zip(pr) {
                    *d = pv * (*d - s) * scale;
                }
            }
            if needs[0] {
                gather_head(k, b, len, h, off, dh, &mut kb);
                tmp.fill(0.0);
                kernels::gemm_nn(&ds, &kb, &mut tmp, len, len, dh);
                scatter_head(&tmp, b, len, h, off, dh, &mut dq);
            }
            if needs[1] {
                gather_head(q, b, len, h, off, dh, &mut qb);
                tmp.fill(0.0);
                kernels::gemm_tn(&ds, &qb, &mut tmp, len, len, dh);
                scatter_head(&tmp, b, len, h, off, dh, &mut dk);
            }
        }
    }
    let keep = |x: Vec<f64>, n: bool| n.then_some(x);
    [keep(dq, needs[0]), keep(dk, needs[1]), keep(dv, needs[2])]
}

/// Rotates interleaved pairs within each head by position-dependent angles;
/// `inverse` applies the transpose rotation.
pub(crate) fn rope_apply(
    x: &[f64],
    cos: &[f64],
    sin: &[f64],
    len: usize,
    head_dim: usize,
    w: usize,
    inverse: bool,
) -> Vec<f64> {
    let half = head_dim / 2;
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut out = vec![0.0; x.len()];
    for (r, (row, orow)) in x.chunks_exact(w).zip(out.chunks_exact_mut(w)).enumerate() {
        let pos = r % len;
        let (c, s) = (&cos[pos * half..][..half], &sin[pos * half..][..half]);
        for head in 0..w / head_dim {
            let base = head * head_dim;
            for p in 0..half {
                let (x0, x1) = (row[base + 2 * p], row[base + 2 * p + 1]);
                let sn = sign * s[p];
                orow[base + 2 * p] = x0 * c[p] - x1 * sn;
                orow[base + 2 * p + 1] = x0 * sn + x1 * c[p];
            }
        }
    }
    out
}

pub(crate) fn conv_backward_input(
    g: &[f64],
    kernel: &[f64],
    batch: usize,
    len: usize,
    w: usize,
    ksize: usize,
) -> Vec<f64> {
    let half = ksize / 2;
    let mut dx = vec![0.0; g.len()];
    for b in 0..batch {
        for i in 0..len {
            let grow = &g[(b * len + i) * w..][..w];
            for t in 0..ksize {
                let Some(src) = (i + t).checked_sub(half).filter(|&s| s < len) else {
                    continue;
                };
                let krow = &kernel[t * w..][..w];
                let drow = &mut dx[(b * len + src) * w..][..w];
                for c in 0..w {
                    drow[c] += krow[c] * grow[c];
                }
            }
        }
    }
    dx
}

pub(crate) fn conv_backward_kernel(
    g: &[f64],
    x: &[f64],
    batch: usize,
    len: usize,
    w: usize,
    ksize: usize,
) -> Vec<f64> {
    let half = ksize / 2;
    let mut dk = vec![0.0; ksize * w];
    for b in 0..batch {
        for i in 0..len {
            let grow = &g[(b * len + i) * w..][..w];
            for t in 0..ksize {
                let Some(src) = (i + t).checked_sub(half).filter(|&s| s < len) else {
                    continue;
                };
                let xrow = &x[(b * len + src) * w..][..w];
                let krow = &mut dk[t * w..][..w];
                for c in 0..w {
                    krow[c] += xrow[c] * grow[c];
                }
            }
        }
    }
    dk
}

impl Graph {
    /// Row lookup: `table[ids[r]]` for each `r`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape("embedding", format!("table must be 2-D, got {shape:?}")));
        }
        let (vocab, w) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("id {bad} >= vocab {vocab}")));
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * w);
        for &i in ids {
            value.extend_from_slice(&tv[i * w..(i + 1) * w]);
        }
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding", vec![ids.len(), w], value, op, &[table])
    }

    /// Selects rows of a 2-D tensor.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::shape("gather_rows", format!("expected 2-D, got {shape:?}")));
        }
        let (n, w) = (shape[0], shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} >= {n}")));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            value.extend_from_slice(&xv[r * w..(r + 1) * w]);
        }
        let op = Op::GatherRows {
            x,
            rows: rows.to_vec(),
        };
        self.push("gather_rows", vec![rows.len(), w], value, op, &[x])
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let w = self.node(x).width();
        let xv = self.value(x);
        if xv.len() != factors.len() * w {
            return Err(Error::shape(
                "scale_rows",
                format!("{} factors for {:?}", factors.len(), self.shape(x)),
            ));
        }
        let value = xv
            .iter()
            .enumerate()
            .map(|(i, v)| v * factors[i / w])
            .collect();
        let shape = self.shape(x).to_vec();
        let op = Op::ScaleRows {
            x,
            factors: factors.to_vec(),
        };
        self.push("scale_rows", shape, value, op, &[x])
    }

    /// Mean token-level cross-entropy of `logits` (rows × classes) against
    /// integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() || targets.is_empty() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {shape:?} with {} targets", targets.len()),
            ));
        }
        let w = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= w) {
            return Err(Error::shape("cross_entropy", format!("target {bad} >= {w}")));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for ((row, prow), &t) in lv.chunks_exact(w).zip(probs.chunks_exact_mut(w)).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                total += *p;
            }
            prow.iter_mut().for_each(|p| *p /= total);
            loss += total.ln() + max - row[t];
        }
        loss /= targets.len() as f64;
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", Vec::new(), vec![loss], op, &[logits])
    }

    /// Multi-head scaled dot-product attention. Padding keys are excluded
    /// from normalization and padding queries produce zero rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() || shape.len() != 2 {
            return Err(Error::shape("attention", "q, k, v must share one 2-D shape"));
        }
        let (rows, h) = (shape[0], shape[1]);
        let (batch, len, nh) = (layout.batch, layout.len, layout.n_heads);
        if rows != batch * len || layout.key_mask.len() != rows || nh == 0 || h % nh != 0 {
            return Err(Error::shape(
                "attention",
                format!("layout {batch}×{len}, {nh} heads does not fit {shape:?}"),
            ));
        }
        let dh = h / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; batch * nh * len * len];
        let mut out = vec![0.0; rows * h];
        let block = len * dh;
        let (mut qb, mut kb, mut vb, mut ob) = (vec![0.0; block], vec![0.0; block], vec![0.0; block], vec![0.0; block]);
        for b in 0..batch {
            for head in 0..nh {
                let off = head * dh;
                gather_head(qv, b, len, h, off, dh, &mut qb);
                gather_head(kv, b, len, h, off, dh, &mut kb);
                gather_head(vv, b, len, h, off, dh, &mut vb);
                let p = &mut probs[(b * nh + head) * len * len..][..len * len];
                kernels::gemm_nt(&qb, &kb, p, len, dh, len);
                for (i, prow) in p.chunks_exact_mut(len).enumerate() {
                    if !layout.key_mask[b * len + i] {
                        prow.fill(0.0);
                        continue;
                    }
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in prow.iter_mut().enumerate() {
                        if layout.allowed(b, i, j) {
                            *s *= scale;
                            max = max.max(*s);
                        } else {
                            *s = f64::NEG_INFINITY;
                        }
                    }
                    let mut total = 0.0;
                    for s in prow.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    prow.iter_mut().for_each(|s| *s /= total);
                }
                ob.fill(0.0);
                kernels::gemm_nn(p, &vb, &mut ob, len, len, dh);
                scatter_head(&ob, b, len, h, off, dh, &mut out);
            }
        }
        let op = Op::Attention {
            q,
            k,
            v,
            layout,
            probs,
        };
        self.push("attention", shape, out, op, &[q, k, v])
    }

    /// Rotary position encoding over `(batch · len) × width` rows, position
    /// `r mod len` for row `r`, applied per head.
    pub fn rope(&mut self, x: Var, len: usize, n_heads: usize, base: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || n_heads == 0 || len == 0 || shape[0] % len != 0 {
            return Err(Error::shape("rope", format!("{shape:?} with len {len}")));
        }
        let w = shape[1];
        if w % n_heads != 0 || (w / n_heads) % 2 != 0 {
            return Err(Error::shape("rope", format!("head dim of width {w} / {n_heads} heads must be even")));
        }
        let head_dim = w / n_heads;
        let (cos, sin) = rope_tables(len, head_dim, base);
        let value = rope_apply(self.value(x), &cos, &sin, len, head_dim, w, false);
        let op = Op::Rope {
            x,
            cos,
            sin,
            len,
            head_dim,
        };
        self.push("rope", shape, value, op, &[x])
    }

    /// Per-channel convolution along the sequence axis with zero padding at
    /// sequence boundaries; `kernel` is `ksize × width`, `ksize` odd.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var, batch: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if shape.len() != 2 || shape[0] != batch * len || ks.len() != 2 || ks[1] != shape[1] || ks[0] % 2 == 0 {
            return Err(Error::shape(
                "depthwise_conv",
                format!("input {shape:?}, kernel {ks:?}, layout {batch}×{len}"),
            ));
        }
        let (w, ksize) = (shape[1], ks[0]);
        let half = ksize / 2;
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for i in 0..len {
                let orow = &mut out[(b * len + i) * w..][..w];
                for t in 0..ksize {
                    let Some(src) = (i + t).checked_sub(half).filter(|&s| s < len) else {
                        continue;
                    };
                    let xrow = &xv[(b * len + src) * w..][..w];
                    let krow = &kv[t * w..][..w];
                    for c in 0..w {
                        orow[c] += krow[c] * xrow[c];
                    }
                }
            }
        }
        let op = Op::DepthwiseConv {
            x,
            kernel,
            batch,
            len,
            ksize,
        };
        self.push("depthwise_conv", shape, out, op, &[x, kernel])
    }
}

fn rope_tables(len: usize, head_dim: usize, base: f64) -> (Vec<f64>, Vec<f64>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(len * half);
    let mut sin = Vec::with_capacity(len * half);
    for pos in 0..len {
        for p in 0..half {
            let freq = base.powf(-2.0 * p as f64 / head_dim as f64);
            let angle = pos as f64 * freq;
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    (cos, sin)
}

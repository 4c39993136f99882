//! Elementwise, reduction, normalization and matrix-product operations.

use statrs::function::erf::erf;

use super::{kernels, AxisSplit, Graph, Op, Var};
use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Column sums of a row-major matrix with `w` columns.
pub(crate) fn sum_rows(x: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; w];
    for row in x.chunks_exact(w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

pub(crate) fn broadcast_axis(g: &[f64], s: AxisSplit, factor: f64) -> Vec<f64> {
    let mut out = vec![0.0; s.outer * s.len * s.inner];
    for o in 0..s.outer {
        for i in 0..s.len {
            for j in 0..s.inner {
                out[s.at(o, i, j)] = g[o * s.inner + j] * factor;
            }
        }
    }
    out
}

fn axis_means(x: &[f64], s: AxisSplit) -> Vec<f64> {
    let mut means = vec![0.0; s.outer * s.inner];
    for o in 0..s.outer {
        for i in 0..s.len {
            for j in 0..s.inner {
                means[o * s.inner + j] += x[s.at(o, i, j)];
            }
        }
    }
    let n = s.len as f64;
    means.iter_mut().for_each(|m| *m /= n);
    means
}

pub(crate) fn variance_backward(x: &[f64], g: &[f64], s: AxisSplit) -> Vec<f64> {
    let means = axis_means(x, s);
    let n = s.len as f64;
    let mut out = vec![0.0; x.len()];
    for o in 0..s.outer {
        for i in 0..s.len {
            for j in 0..s.inner {
                let r = o * s.inner + j;
                let idx = s.at(o, i, j);
                out[idx] = g[r] * 2.0 * (x[idx] - means[r]) / n;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], s: AxisSplit) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for o in 0..s.outer {
        for j in 0..s.inner {
            let dotp: f64 = (0..s.len)
                .map(|i| {
                    let idx = s.at(o, i, j);
                    g[idx] * y[idx]
                })
                .sum();
            for i in 0..s.len {
                let idx = s.at(o, i, j);
                out[idx] = y[idx] * (g[idx] - dotp);
            }
        }
    }
    out
}

pub(crate) fn layer_norm_backward(y: &[f64], g: &[f64], inv_std: &[f64], w: usize) -> Vec<f64> {
    let n = w as f64;
    let mut out = vec![0.0; y.len()];
    for (r, ((yr, gr), or)) in y
        .chunks_exact(w)
        .zip(g.chunks_exact(w))
        .zip(out.chunks_exact_mut(w))
        .enumerate()
    {
        let mean_g = gr.iter().sum::<f64>() / n;
        let mean_gy = kernels::dot(gr, yr) / n;
        for ((o, &gi), &yi) in or.iter_mut().zip(gr).zip(yr) {
            *o = inv_std[r] * (gi - mean_g - yi * mean_gy);
        }
    }
    out
}

pub(crate) fn rms_norm_backward(y: &[f64], g: &[f64], inv_rms: &[f64], w: usize) -> Vec<f64> {
    let n = w as f64;
    let mut out = vec![0.0; y.len()];
    for (r, ((yr, gr), or)) in y
        .chunks_exact(w)
        .zip(g.chunks_exact(w))
        .zip(out.chunks_exact_mut(w))
        .enumerate()
    {
        let mean_gy = kernels::dot(gr, yr) / n;
        for ((o, &gi), &yi) in or.iter_mut().zip(gr).zip(yr) {
            *o = inv_rms[r] * (gi - yi * mean_gy);
        }
    }
    out
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, value, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn row_check(&self, op: &'static str, x: Var, row: Var) -> Result<usize> {
        let w = self.node(x).width();
        if self.shape(row) != [w] {
            return Err(Error::shape(
                op,
                format!("row {:?} does not match trailing axis of {:?}", self.shape(row), self.shape(x)),
            ));
        }
        Ok(w)
    }

    /// Adds a vector to every row (trailing-axis broadcast).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let w = self.row_check("add_row", x, row)?;
        let r = self.value(row);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + r[i % w])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add_row", shape, value, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies every row elementwise by a vector (trailing-axis broadcast).
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let w = self.row_check("mul_row", x, row)?;
        let r = self.value(row);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * r[i % w])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_row", shape, value, Op::MulRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary("pow", x, |v| v.powf(p), Op::Pow(x, p))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Vec::new(), vec![m], Op::Mean(x), &[x])
    }

    fn split(&self, op: &'static str, x: Var, axis: usize) -> Result<(AxisSplit, Vec<usize>)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
        }
        let mut reduced = shape.to_vec();
        reduced.remove(axis);
        Ok((AxisSplit::of(shape, axis), reduced))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (s, shape) = self.split("sum_axis", x, axis)?;
        let means = axis_means(self.value(x), s);
        let value = means.iter().map(|m| m * s.len as f64).collect();
        self.push("sum_axis", shape, value, Op::SumAxis(x, s), &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (s, shape) = self.split("mean_axis", x, axis)?;
        let value = axis_means(self.value(x), s);
        self.push("mean_axis", shape, value, Op::MeanAxis(x, s), &[x])
    }

    /// Population variance along `axis`.
    pub fn variance(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (s, shape) = self.split("variance", x, axis)?;
        let xv = self.value(x);
        let means = axis_means(xv, s);
        let mut value = vec![0.0; s.outer * s.inner];
        for o in 0..s.outer {
            for i in 0..s.len {
                for j in 0..s.inner {
                    let d = xv[s.at(o, i, j)] - means[o * s.inner + j];
                    value[o * s.inner + j] += d * d;
                }
            }
        }
        value.iter_mut().for_each(|v| *v /= s.len as f64);
        self.push("variance", shape, value, Op::Variance(x, s), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (s, _) = self.split("softmax", x, axis)?;
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for o in 0..s.outer {
            for j in 0..s.inner {
                let max = (0..s.len)
                    .map(|i| xv[s.at(o, i, j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..s.len {
                    let e = (xv[s.at(o, i, j)] - max).exp();
                    value[s.at(o, i, j)] = e;
                    total += e;
                }
                for i in 0..s.len {
                    value[s.at(o, i, j)] /= total;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, value, Op::Softmax(x, s), &[x])
    }

    /// Gain-free layer normalization over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
        }
        let w = self.node(x).width();
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.len() / w);
        for (row, out) in xv.chunks_exact(w).zip(value.chunks_exact_mut(w)) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let r = 1.0 / (var + eps).sqrt();
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mean) * r;
            }
            inv_std.push(r);
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", shape, value, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Gain-free RMS normalization over the trailing axis: `x / sqrt(mean(x²) + eps)`.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("rms_norm eps must be > 0".into()));
        }
        let w = self.node(x).width();
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        let mut inv_rms = Vec::with_capacity(xv.len() / w);
        for (row, out) in xv.chunks_exact(w).zip(value.chunks_exact_mut(w)) {
            let ms = kernels::dot(row, row) / w as f64;
            let r = 1.0 / (ms + eps).sqrt();
            for (o, v) in out.iter_mut().zip(row) {
                *o = v * r;
            }
            inv_rms.push(r);
        }
        let shape = self.shape(x).to_vec();
        self.push("rms_norm", shape, value, Op::RmsNorm { x, inv_rms }, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a), self.value(b), &mut value, m, k, n);
        self.push("matmul", vec![m, n], value, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let value = transpose(self.value(x), rows, cols);
        self.push("transpose", vec![cols, rows], value, Op::Transpose { x, rows, cols }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let value = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), value, Op::Reshape(x), &[x])
    }
}

//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] owns every [`TensorNode`] created during one forward pass.
//! Operations append nodes and return a [`Var`] handle; [`Graph::backward`]
//! walks the tape in reverse from a scalar root. Graphs are rebuilt each
//! training step and are confined to a single thread.

mod kernels;
mod nn;
mod ops;

pub use nn::AttentionLayout;

use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

/// Split of a tensor around one axis: `outer × len × inner` in row-major order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisSplit {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisSplit {
    fn of(shape: &[usize], axis: usize) -> Self {
        AxisSplit {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    fn at(&self, o: usize, i: usize, j: usize) -> usize {
        (o * self.len + i) * self.inner + j
    }
}

/// Backward record of the operation that produced a node.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Pow(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, AxisSplit),
    MeanAxis(Var, AxisSplit),
    Variance(Var, AxisSplit),
    Softmax(Var, AxisSplit),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    RmsNorm { x: Var, inv_rms: Vec<f64> },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape(Var),
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { x: Var, rows: Vec<usize> },
    ScaleRows { x: Var, factors: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, layout: AttentionLayout, probs: Vec<f64> },
    Rope { x: Var, cos: Vec<f64>, sin: Vec<f64>, len: usize, head_dim: usize },
    DepthwiseConv { x: Var, kernel: Var, batch: usize, len: usize, ksize: usize },
}

/// A differentiable array: values, a lazily allocated gradient, and the
/// record of the op that produced it.
#[derive(Debug)]
pub struct TensorNode {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

impl TensorNode {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Width of the trailing axis.
    pub(crate) fn width(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<TensorNode>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TensorNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, or zeros when no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} needs {numel} values, got {}", values.len()),
            ));
        }
        self.nodes.push(TensorNode {
            shape: shape.to_vec(),
            value: values,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.nodes.push(TensorNode {
            shape: Vec::new(),
            value: vec![value],
            grad: None,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `x` with gradient flow severed.
    pub fn detach(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.nodes.push(TensorNode {
            shape,
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(TensorNode {
            shape,
            value,
            grad: None,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a single-element root. Gradients from any earlier
    /// pass are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, has shape {:?}", self.nodes[root.0].shape),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            let (before, rest) = self.nodes.split_at_mut(i);
            let contributions = backward_op(&rest[0], before, &gout);
            rest[0].grad = Some(gout);
            for (v, delta) in contributions {
                let target = &mut before[v.0];
                match &mut target.grad {
                    Some(g) => {
                        for (a, d) in g.iter_mut().zip(&delta) {
                            *a += d;
                        }
                    }
                    None => target.grad = Some(delta),
                }
            }
        }
        Ok(())
    }
}

type Contributions = Vec<(Var, Vec<f64>)>;

/// Collects gradient contributions for the parents that require them.
pub(crate) struct Back<'a> {
    nodes: &'a [TensorNode],
    out: Contributions,
}

impl<'a> Back<'a> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &'a [f64] {
        &self.nodes[v.0].value
    }

    fn node(&self, v: Var) -> &'a TensorNode {
        &self.nodes[v.0]
    }

    fn emit(&mut self, v: Var, f: impl FnOnce() -> Vec<f64>) {
        if self.needs(v) {
            self.out.push((v, f()));
        }
    }
}

fn backward_op(node: &TensorNode, before: &[TensorNode], g: &[f64]) -> Contributions {
    let mut b = Back {
        nodes: before,
        out: Vec::new(),
    };
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        &Op::Add(x1, x2) => {
            b.emit(x1, || g.to_vec());
            b.emit(x2, || g.to_vec());
        }
        &Op::Sub(x1, x2) => {
            b.emit(x1, || g.to_vec());
            b.emit(x2, || g.iter().map(|v| -v).collect());
        }
        &Op::Mul(x1, x2) => {
            let (v1, v2) = (b.val(x1), b.val(x2));
            b.emit(x1, || g.iter().zip(v2).map(|(g, v)| g * v).collect());
            b.emit(x2, || g.iter().zip(v1).map(|(g, v)| g * v).collect());
        }
        &Op::Div(x1, x2) => {
            let v2 = b.val(x2);
            b.emit(x1, || g.iter().zip(v2).map(|(g, d)| g / d).collect());
            b.emit(x2, || {
                g.iter()
                    .zip(y)
                    .zip(v2)
                    .map(|((g, q), d)| -g * q / d)
                    .collect()
            });
        }
        &Op::AddRow(x, row) => {
            b.emit(x, || g.to_vec());
            let w = b.node(row).value.len();
            b.emit(row, || ops::sum_rows(g, w));
        }
        &Op::MulRow(x, row) => {
            let (xv, rv) = (b.val(x), b.val(row));
            let w = rv.len();
            b.emit(x, || {
                g.iter()
                    .enumerate()
                    .map(|(i, g)| g * rv[i % w])
                    .collect()
            });
            b.emit(row, || {
                let prod: Vec<f64> = g.iter().zip(xv).map(|(g, x)| g * x).collect();
                ops::sum_rows(&prod, w)
            });
        }
        &Op::Scale(x, s) => b.emit(x, || g.iter().map(|g| g * s).collect()),
        &Op::AddScalar(x) => b.emit(x, || g.to_vec()),
        &Op::Pow(x, p) => {
            let xv = b.val(x);
            b.emit(x, || {
                g.iter()
                    .zip(xv)
                    .map(|(g, x)| g * p * x.powf(p - 1.0))
                    .collect()
            });
        }
        &Op::Exp(x) => b.emit(x, || g.iter().zip(y).map(|(g, y)| g * y).collect()),
        &Op::Log(x) => {
            let xv = b.val(x);
            b.emit(x, || g.iter().zip(xv).map(|(g, x)| g / x).collect());
        }
        &Op::Tanh(x) => b.emit(x, || g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()),
        &Op::Sigmoid(x) => {
            b.emit(x, || g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())
        }
        &Op::Silu(x) => {
            let xv = b.val(x);
            b.emit(x, || {
                g.iter()
                    .zip(xv)
                    .map(|(g, &x)| {
                        let s = ops::sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect()
            });
        }
        &Op::Gelu(x) => {
            let xv = b.val(x);
            b.emit(x, || g.iter().zip(xv).map(|(g, &x)| g * ops::gelu_grad(x)).collect());
        }
        &Op::Sqrt(x) => b.emit(x, || g.iter().zip(y).map(|(g, y)| g / (2.0 * y)).collect()),
        &Op::Sum(x) => {
            let n = b.node(x).value.len();
            b.emit(x, || vec![g[0]; n]);
        }
        &Op::Mean(x) => {
            let n = b.node(x).value.len();
            b.emit(x, || vec![g[0] / n as f64; n]);
        }
        &Op::SumAxis(x, s) => b.emit(x, || ops::broadcast_axis(g, s, 1.0)),
        &Op::MeanAxis(x, s) => b.emit(x, || ops::broadcast_axis(g, s, 1.0 / s.len as f64)),
        &Op::Variance(x, s) => {
            let xv = b.val(x);
            b.emit(x, || ops::variance_backward(xv, g, s));
        }
        &Op::Softmax(x, s) => b.emit(x, || ops::softmax_backward(y, g, s)),
        Op::LayerNorm { x, inv_std } => {
            let w = node.width();
            b.emit(*x, || ops::layer_norm_backward(y, g, inv_std, w));
        }
        Op::RmsNorm { x, inv_rms } => {
            let w = node.width();
            b.emit(*x, || ops::rms_norm_backward(y, g, inv_rms, w));
        }
        &Op::MatMul { a, b: bm, m, k, n } => {
            let (av, bv) = (b.val(a), b.val(bm));
            b.emit(a, || {
                let mut da = vec![0.0; m * k];
                kernels::gemm_nt(g, bv, &mut da, m, n, k);
                da
            });
            b.emit(bm, || {
                let mut db = vec![0.0; k * n];
                kernels::gemm_tn(av, g, &mut db, m, k, n);
                db
            });
        }
        &Op::Transpose { x, rows, cols } => {
            b.emit(x, || ops::transpose(g, cols, rows));
        }
        &Op::Reshape(x) => b.emit(x, || g.to_vec()),
        Op::Embedding { table, ids } => {
            let t = b.node(*table);
            let w = t.width();
            let n = t.value.len();
            b.emit(*table, || nn::scatter_rows(g, ids, w, n));
        }
        Op::GatherRows { x, rows } => {
            let xn = b.node(*x);
            let w = xn.width();
            let n = xn.value.len();
            b.emit(*x, || nn::scatter_rows(g, rows, w, n));
        }
        Op::ScaleRows { x, factors } => {
            let w = node.width();
            b.emit(*x, || {
                g.iter()
                    .enumerate()
                    .map(|(i, g)| g * factors[i / w])
                    .collect()
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let w = b.node(*logits).width();
            b.emit(*logits, || nn::cross_entropy_backward(probs, targets, w, g[0]));
        }
        Op::Attention {
            q,
            k,
            v,
            layout,
            probs,
        } => {
            let grads = nn::attention_backward(
                b.val(*q),
                b.val(*k),
                b.val(*v),
                probs,
                g,
                layout,
                [b.needs(*q), b.needs(*k), b.needs(*v)],
            );
            for (var, grad) in [*q, *k, *v].into_iter().zip(grads) {
                if let Some(grad) = grad {
                    b.out.push((var, grad));
                }
            }
        }
        Op::Rope {
            x,
            cos,
            sin,
            len,
            head_dim,
        } => {
            let w = node.width();
            b.emit(*x, || nn::rope_apply(g, cos, sin, *len, *head_dim, w, true));
        }
        &Op::DepthwiseConv {
            x,
            kernel,
            batch,
            len,
            ksize,
        } => {
            let (xv, kv) = (b.val(x), b.val(kernel));
            let w = node.width();
            b.emit(x, || nn::conv_backward_input(g, kv, batch, len, w, ksize));
            b.emit(kernel, || nn::conv_backward_kernel(g, xv, batch, len, w, ksize));
        }
    }
    b.out
}

#[cfg(test)]
pub(crate) mod testing {
    //! Central finite-difference gradient checking.

    use super::*;

    /// Compares analytic gradients of `f` at `inputs` against central
    /// differences; returns the worst relative error across all coordinates.
    ///
    /// Relative error is `|a − n| / max(|a|, |n|, floor)`.
    pub fn max_rel_error(
        inputs: &[(Vec<usize>, Vec<f64>)],
        eps: f64,
        floor: f64,
        f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    ) -> f64 {
        let build = |vals: &[(Vec<usize>, Vec<f64>)]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals
                .iter()
                .map(|(s, v)| g.param(s, v.clone()).unwrap())
                .collect();
            let out = f(&mut g, &vars).unwrap();
            (g, vars, out)
        };
        let (mut g, vars, out) = build(inputs);
        g.backward(out).unwrap();
        let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

        let mut worst: f64 = 0.0;
        for (ti, (_, vals)) in inputs.iter().enumerate() {
            for j in 0..vals.len() {
                let mut plus = inputs.to_vec();
                plus[ti].1[j] += eps;
                let mut minus = inputs.to_vec();
                minus[ti].1[j] -= eps;
                let (gp, _, op) = build(&plus);
                let (gm, _, om) = build(&minus);
                let numeric = (gp.scalar_value(op) - gm.scalar_value(om)) / (2.0 * eps);
                let a = analytic[ti][j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
        worst
    }
}

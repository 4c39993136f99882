use super::config::LatentLoss;
use crate::encoder::{swiglu, swiglu_width};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Var};
use crate::params::{Bound, ParamStore, Tensor};
use crate::seeds;

/// Layer-norm epsilon for predictions and targets.
pub const NORM_EPS: f64 = 1e-5;

/// Bias-free SwiGLU predictor `hidden → ⌈8·hidden/3⌉ → hidden`.
pub fn init_predictor(hidden: usize, seed: u64) -> ParamStore {
    let mut rng = seeds::rng(seed, seeds::tag::INIT, 1);
    let f = swiglu_width(hidden);
    let std_in = 1.0 / (hidden as f64).sqrt();
    let std_out = 1.0 / (f as f64).sqrt();
    let mut p = ParamStore::new();
    p.insert("predictor.w_gate", Tensor::normal(&[hidden, f], std_in, &mut rng));
    p.insert("predictor.w_up", Tensor::normal(&[hidden, f], std_in, &mut rng));
    p.insert("predictor.w_down", Tensor::normal(&[f, hidden], std_out, &mut rng));
    p
}

pub fn predict(g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    swiglu(
        g,
        x,
        p.get("predictor.w_gate")?,
        p.get("predictor.w_up")?,
        p.get("predictor.w_down")?,
    )
}

/// Gain-free layer normalization applied to predictions and targets.
pub fn normalize(g: &mut Graph, x: Var) -> Result<Var> {
    g.layer_norm(x, NORM_EPS)
}

/// Mean token cross-entropy of `logits` rows against `targets`.
pub fn mlm_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no masked positions".into()));
    }
    g.cross_entropy(logits, targets)
}

/// Row-wise distance between aligned `n × d` predictions and targets:
/// mean `1 − cos` or mean squared difference over all elements.
pub fn latent_distance(g: &mut Graph, pred: Var, target: Var, form: LatentLoss) -> Result<Var> {
    match form {
        LatentLoss::Cosine => {
            let pt = g.mul(pred, target)?;
            let dot = g.sum_axis(pt, 1)?;
            let pp = g.mul(pred, pred)?;
            let pp = g.sum_axis(pp, 1)?;
            let tt = g.mul(target, target)?;
            let tt = g.sum_axis(tt, 1)?;
            let norms = g.mul(pp, tt)?;
            let norms = g.add_scalar(norms, 1e-24)?;
            let norms = g.sqrt(norms)?;
            let cos = g.div(dot, norms)?;
            let m = g.mean(cos)?;
            let neg = g.scale(m, -1.0)?;
            g.add_scalar(neg, 1.0)
        }
        LatentLoss::Mse => {
            let d = g.sub(pred, target)?;
            let d2 = g.mul(d, d)?;
            g.mean(d2)
        }
    }
}

/// Latent prediction loss at `positions` of the student hidden grid.
/// Returns the loss and the normalized predictions, or `None` for an empty
/// position set.
pub fn jepa_latent_loss(
    g: &mut Graph,
    predictor: &Bound,
    student: Var,
    targets: Var,
    positions: &[usize],
    form: LatentLoss,
) -> Result<Option<(Var, Var)>> {
    if positions.is_empty() {
        return Ok(None);
    }
    if g.shape(student) != g.shape(targets) {
        return Err(Error::shape(
            "jepa_latent_loss",
            format!("student {:?} vs targets {:?}", g.shape(student), g.shape(targets)),
        ));
    }
    let s = g.gather_rows(student, positions)?;
    let pred = predict(g, predictor, s)?;
    let pred = normalize(g, pred)?;
    let t = g.gather_rows(targets, positions)?;
    let t = normalize(g, t)?;
    let loss = latent_distance(g, pred, t, form)?;
    Ok(Some((loss, pred)))
}

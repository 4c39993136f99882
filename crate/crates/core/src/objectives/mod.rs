//! Training objectives: MLM cross-entropy, latent prediction at masked or
//! all positions, the SIGReg regularizer, and their weighted combination.

mod config;
mod losses;
mod sigreg;

pub use config::{LatentLoss, ObjectiveConfig, ObjectiveKind, Regularizer, SigregConfig, TargetMode};
pub use losses::{
    init_predictor, jepa_latent_loss, latent_distance, mlm_cross_entropy, normalize, predict, NORM_EPS,
};
pub use sigreg::{projection_directions, sigreg};

use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::seqdata::{MaskPlan, TokenBatch, Vocabulary};

/// Scalar loss terms of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mlm_ce: f64,
    pub jepa_latent: f64,
    pub sigreg: f64,
    pub total: f64,
    pub n_masked_positions: usize,
    pub n_target_positions: usize,
    pub mlm_skipped: bool,
    pub jepa_skipped: bool,
    pub sigreg_skipped: bool,
    /// Mean per-projection standard deviation of normalized predictor
    /// outputs, when SIGReg ran.
    pub pred_proj_std: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Everything a step needs besides parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub clean: &'a TokenBatch,
    pub plan: &'a MaskPlan,
    /// Target hidden grid from [`jepa_targets`]; required for JEPA kinds.
    pub targets: Option<&'a [f64]>,
    pub step: u64,
    pub projection_seed: u64,
}

/// Target hidden states on the clean batch, computed without gradient
/// tracking. Pass the training parameters for detached targets or the EMA
/// copy for a teacher.
pub fn jepa_targets(params: &ParamStore, enc: &EncoderConfig, clean: &TokenBatch) -> Result<Vec<f64>> {
    encoder::encode(params, enc, clean)
}

/// `ema ← decay·ema + (1 − decay)·params` for every tensor of `ema`.
pub fn ema_update(ema: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    if !ema.same_layout(params) {
        return Err(Error::InvalidArgument("ema and parameter layouts differ".into()));
    }
    for (e, p) in ema.tensors_mut().iter_mut().zip(params.tensors()) {
        for (a, b) in e.data.iter_mut().zip(&p.data) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
    Ok(())
}

/// Flat grid indices that feed the latent loss for `cfg.kind`.
pub fn jepa_positions(cfg: &ObjectiveConfig, clean: &TokenBatch, plan: &MaskPlan) -> Vec<usize> {
    match cfg.kind {
        ObjectiveKind::Mlm => Vec::new(),
        ObjectiveKind::MlmJepaMasked => {
            if !cfg.include_special_targets {
                return plan.positions.clone();
            }
            let vocab = Vocabulary;
            let mut pos: Vec<usize> = plan
                .positions
                .iter()
                .copied()
                .chain((0..clean.ids.len()).filter(|&i| clean.attention_mask[i] && vocab.is_special(clean.ids[i])))
                .collect();
            pos.sort_unstable();
            pos.dedup();
            pos
        }
        ObjectiveKind::MlmJepaAllpos | ObjectiveKind::JepaOnly => {
            (0..clean.ids.len()).filter(|&i| clean.attention_mask[i]).collect()
        }
    }
}

/// Builds the weighted objective on `g`.
///
/// `params` must hold the encoder, the MLM head and, for JEPA kinds, the
/// predictor. The student sees the corrupted batch from `inputs.plan`.
pub fn combined_loss(
    g: &mut Graph,
    cfg: &ObjectiveConfig,
    enc: &EncoderConfig,
    params: &Bound,
    inputs: StepInputs,
) -> Result<LossGraph> {
    let StepInputs {
        clean, plan, targets, ..
    } = inputs;
    if plan.corrupted.len() != clean.ids.len() {
        return Err(Error::shape("combined_loss", "mask plan does not match the batch"));
    }
    let mut out = LossBreakdown {
        n_masked_positions: plan.n_selected(),
        ..Default::default()
    };
    let masked = clean.with_ids(plan.corrupted.clone());
    let hidden = encoder::forward(g, params, enc, &masked)?;
    let mut terms: Vec<Var> = Vec::new();

    if plan.positions.is_empty() {
        out.mlm_skipped = true;
    } else {
        let logits = if cfg.mlm_weight() > 0.0 {
            encoder::mlm_logits(g, params, &hidden, &plan.positions)?
        } else {
            // logged only; kept off the gradient path
            let h = g.detach(hidden.var);
            let detached = encoder::Hidden { var: h, ..hidden };
            encoder::mlm_logits(g, params, &detached, &plan.positions)?
        };
        let ce = mlm_cross_entropy(g, logits, &plan.originals)?;
        out.mlm_ce = g.scalar_value(ce);
        if cfg.mlm_weight() > 0.0 {
            terms.push(g.scale(ce, cfg.mlm_weight())?);
        }
    }

    if cfg.kind.has_jepa() {
        let positions = jepa_positions(cfg, clean, plan);
        out.n_target_positions = positions.len();
        let targets = targets.ok_or_else(|| Error::InvalidArgument("JEPA objective without targets".into()))?;
        let shape = g.shape(hidden.var).to_vec();
        let t = g.constant(&shape, targets.to_vec())?;
        match jepa_latent_loss(g, params, hidden.var, t, &positions, cfg.latent_loss())? {
            None => {
                out.jepa_skipped = true;
                out.sigreg_skipped = true;
            }
            Some((loss, pred)) => {
                out.jepa_latent = g.scalar_value(loss);
                terms.push(g.scale(loss, cfg.lambda)?);
                if positions.len() < 2 {
                    out.sigreg_skipped = true;
                } else {
                    let hdim = enc.hidden_size;
                    let counter = if cfg.sigreg.resample_each_step { inputs.step } else { 0 };
                    let dirs = projection_directions(hdim, cfg.sigreg.n_projections, inputs.projection_seed, counter);
                    let (pen, std) = sigreg(g, pred, &dirs, cfg.sigreg.eps)?;
                    out.sigreg = g.scalar_value(pen);
                    out.pred_proj_std = Some(std);
                    if cfg.alpha > 0.0 {
                        terms.push(g.scale(pen, cfg.alpha)?);
                    }
                }
            }
        }
    }

    let total = match terms.split_first() {
        None => g.scalar(0.0),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t)?;
            }
            acc
        }
    };
    out.total = g.scalar_value(total);
    Ok(LossGraph { total, breakdown: out })
}

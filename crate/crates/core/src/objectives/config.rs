use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Mlm,
    MlmJepaMasked,
    MlmJepaAllpos,
    JepaOnly,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Mlm,
        ObjectiveKind::MlmJepaMasked,
        ObjectiveKind::MlmJepaAllpos,
        ObjectiveKind::JepaOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mlm => "mlm",
            ObjectiveKind::MlmJepaMasked => "mlm_jepa_masked",
            ObjectiveKind::MlmJepaAllpos => "mlm_jepa_allpos",
            ObjectiveKind::JepaOnly => "jepa_only",
        }
    }

    pub fn has_jepa(self) -> bool {
        self != ObjectiveKind::Mlm
    }

    pub fn mlm_weight(self) -> f64 {
        if self == ObjectiveKind::JepaOnly {
            0.0
        } else {
            1.0
        }
    }

    pub fn default_latent_loss(self) -> LatentLoss {
        match self {
            ObjectiveKind::Mlm | ObjectiveKind::MlmJepaMasked => LatentLoss::Cosine,
            ObjectiveKind::MlmJepaAllpos | ObjectiveKind::JepaOnly => LatentLoss::Mse,
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentLoss {
    Cosine,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetMode {
    /// Same parameters on the clean batch under stop-gradient.
    Detached,
    /// Exponential moving average teacher, updated after every step.
    Ema { decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    Sigreg,
    /// Reserved; not implemented.
    Vicreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigregConfig {
    pub n_projections: usize,
    /// Draw fresh directions each step instead of reusing step 0's.
    pub resample_each_step: bool,
    /// Added to the per-projection variance before the square root.
    pub eps: f64,
}

impl Default for SigregConfig {
    fn default() -> Self {
        SigregConfig {
            n_projections: 256,
            resample_each_step: true,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    pub alpha: f64,
    /// `None` selects the kind's default form.
    pub latent_loss: Option<LatentLoss>,
    pub target_mode: TargetMode,
    pub regularizer: Regularizer,
    pub sigreg: SigregConfig,
    pub mask_rate: f64,
    /// Add CLS/EOS positions to the masked-position JEPA target set.
    pub include_special_targets: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig::new(ObjectiveKind::MlmJepaMasked)
    }
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveConfig {
            kind,
            lambda: 0.45,
            alpha: 1.0,
            latent_loss: None,
            target_mode: TargetMode::Detached,
            regularizer: Regularizer::Sigreg,
            sigreg: SigregConfig::default(),
            mask_rate: 0.20,
            include_special_targets: false,
        }
    }

    pub fn latent_loss(&self) -> LatentLoss {
        self.latent_loss.unwrap_or(self.kind.default_latent_loss())
    }

    pub fn mlm_weight(&self) -> f64 {
        self.kind.mlm_weight()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return fail(format!("mask_rate must be in (0, 1), got {}", self.mask_rate));
        }
        if !(self.lambda >= 0.0 && self.alpha >= 0.0 && self.lambda.is_finite() && self.alpha.is_finite()) {
            return fail("lambda and alpha must be finite and non-negative".into());
        }
        if self.sigreg.n_projections == 0 || self.sigreg.eps <= 0.0 {
            return fail("sigreg needs at least one projection and eps > 0".into());
        }
        if let TargetMode::Ema { decay } = self.target_mode {
            if !(0.0..=1.0).contains(&decay) {
                return fail(format!("ema decay must be in [0, 1], got {decay}"));
            }
        }
        if self.regularizer == Regularizer::Vicreg && self.kind.has_jepa() {
            return fail("the vicreg regularizer is reserved and not implemented".into());
        }
        Ok(())
    }
}

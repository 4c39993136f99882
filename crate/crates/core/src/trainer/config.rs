use serde::{Deserialize, Serialize};

use crate::blob::Dtype;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Budget {
    /// Checkpoint after each listed optimizer-step count.
    Steps { checkpoints: Vec<u64> },
    /// Checkpoint once each listed amount of training wall time has elapsed.
    WallSeconds { checkpoints: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub mask: u64,
    pub projection: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            init: 0,
            data: 1,
            mask: 2,
            projection: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub run_name: String,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    /// 3e-4 from scratch, 3e-5 when continuing a pretrained backbone.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub budget: Budget,
    #[serde(default)]
    pub seeds: Seeds,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip_norm: Option<f64>,
    /// Storage precision of checkpoints. `f64` makes resume bit-exact.
    #[serde(default)]
    pub checkpoint_dtype: Dtype,
}

fn default_lr() -> f64 {
    3e-4
}

fn default_warmup() -> u64 {
    1000
}

fn default_wd() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn new(run_name: impl Into<String>, encoder: EncoderConfig, objective: ObjectiveConfig, budget: Budget) -> Self {
        TrainConfig {
            run_name: run_name.into(),
            encoder,
            objective,
            learning_rate: default_lr(),
            warmup_steps: default_warmup(),
            weight_decay: default_wd(),
            batch_size: 128,
            budget,
            seeds: Seeds::default(),
            grad_clip_norm: None,
            checkpoint_dtype: Dtype::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.encoder.validate()?;
        self.objective.validate()?;
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name.starts_with('.') {
            return fail(format!("invalid run name `{}`", self.run_name));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate must be positive and weight_decay non-negative".into());
        }
        if self.grad_clip_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("grad_clip_norm must be positive".into());
        }
        let increasing = match &self.budget {
            Budget::Steps { checkpoints } => {
                !checkpoints.is_empty() && checkpoints[0] > 0 && checkpoints.windows(2).all(|w| w[0] < w[1])
            }
            Budget::WallSeconds { checkpoints } => {
                !checkpoints.is_empty() && checkpoints[0] > 0.0 && checkpoints.windows(2).all(|w| w[0] < w[1])
            }
        };
        if !increasing {
            return fail("budget checkpoints must be positive and strictly increasing".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::new(
            "toy",
            EncoderConfig::esm2_style(2, 16, 4),
            ObjectiveConfig::default(),
            Budget::Steps { checkpoints: vec![5, 10] },
        )
    }

    #[test]
    fn defaults_and_validation() {
        let c = cfg();
        assert_eq!((c.learning_rate, c.warmup_steps, c.weight_decay), (3e-4, 1000, 0.01));
        c.validate().unwrap();
        let mut bad = cfg();
        bad.budget = Budget::Steps { checkpoints: vec![10, 10] };
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.run_name = "../x".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_with_defaults() {
        let text = r#"{
            "run_name": "r",
            "encoder": {"n_layers":1,"hidden_size":8,"n_heads":2,"ffn_kind":"gelu_mlp","norm_kind":"layer_norm",
                        "position_kind":"rope","attention_pattern":{"kind":"global"},"conv_stem":{"kind":"none"},
                        "max_len":64,"vocab_size":30},
            "batch_size": 4,
            "budget": {"kind":"steps","checkpoints":[3]}
        }"#;
        let c: TrainConfig = serde_json::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.objective, ObjectiveConfig::default());
        assert_eq!(c.checkpoint_dtype, Dtype::F32);
    }
}

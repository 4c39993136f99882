use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{Tokenizer, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    GeluMlp,
    Swiglu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    Learned,
    Rope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttentionPattern {
    Global,
    /// Local attention (keys within `window` positions) at even layers,
    /// global at odd layers.
    AlternatingLocalGlobal { window: usize },
    /// Local attention at every layer.
    Local { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConvStem {
    None,
    /// Residual depthwise (kernel 5, stride 1) + pointwise blocks.
    DepthwiseSeparable { n_layers: usize },
}

pub const CONV_KERNEL: usize = 5;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub ffn_kind: FfnKind,
    pub norm_kind: NormKind,
    pub position_kind: PositionKind,
    pub attention_pattern: AttentionPattern,
    pub conv_stem: ConvStem,
    pub max_len: usize,
    pub vocab_size: usize,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    /// Frame sequences with CLS/EOS.
    #[serde(default)]
    pub framing: bool,
}

fn default_eps() -> f64 {
    1e-5
}

impl EncoderConfig {
    /// ESM2-style backbone: pre-LayerNorm, GELU MLP, rotary positions,
    /// global attention, CLS/EOS framing.
    pub fn esm2_style(n_layers: usize, hidden_size: usize, n_heads: usize) -> Self {
        EncoderConfig {
            n_layers,
            hidden_size,
            n_heads,
            ffn_kind: FfnKind::GeluMlp,
            norm_kind: NormKind::LayerNorm,
            position_kind: PositionKind::Rope,
            attention_pattern: AttentionPattern::Global,
            conv_stem: ConvStem::None,
            max_len: 512,
            vocab_size: Vocabulary::SIZE,
            norm_eps: 1e-5,
            framing: true,
        }
    }

    /// ProteinBERT2-style backbone: RMSNorm, SwiGLU, rotary positions,
    /// three-layer depthwise-separable conv stem, alternating local/global
    /// attention with window 256, no framing tokens.
    pub fn protein_bert2(n_layers: usize, hidden_size: usize, n_heads: usize) -> Self {
        EncoderConfig {
            n_layers,
            hidden_size,
            n_heads,
            ffn_kind: FfnKind::Swiglu,
            norm_kind: NormKind::RmsNorm,
            position_kind: PositionKind::Rope,
            attention_pattern: AttentionPattern::AlternatingLocalGlobal { window: 256 },
            conv_stem: ConvStem::DepthwiseSeparable { n_layers: 3 },
            max_len: 512,
            vocab_size: Vocabulary::SIZE,
            norm_eps: 1e-5,
            framing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.hidden_size == 0 || self.n_heads == 0 {
            return fail("n_layers, hidden_size and n_heads must be positive".into());
        }
        if self.hidden_size % self.n_heads != 0 {
            return fail(format!(
                "hidden_size {} not divisible by n_heads {}",
                self.hidden_size, self.n_heads
            ));
        }
        if self.position_kind == PositionKind::Rope && self.head_dim() % 2 != 0 {
            return fail(format!("rotary positions need an even head dim, got {}", self.head_dim()));
        }
        match self.attention_pattern {
            AttentionPattern::AlternatingLocalGlobal { window: 0 } | AttentionPattern::Local { window: 0 } => {
                return fail("local attention window must be > 0".into());
            }
            _ => {}
        }
        if self.vocab_size < Vocabulary::SIZE {
            return fail(format!("vocab_size must be at least {}", Vocabulary::SIZE));
        }
        if self.max_len < 2 || self.norm_eps <= 0.0 {
            return fail("max_len must be >= 2 and norm_eps > 0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }

    pub fn ffn_width(&self) -> usize {
        match self.ffn_kind {
            FfnKind::GeluMlp => 4 * self.hidden_size,
            FfnKind::Swiglu => swiglu_width(self.hidden_size),
        }
    }

    /// Attention window of layer `l`, `None` for global.
    pub fn window(&self, layer: usize) -> Option<usize> {
        match self.attention_pattern {
            AttentionPattern::Global => None,
            AttentionPattern::AlternatingLocalGlobal { window } => (layer % 2 == 0).then_some(window),
            AttentionPattern::Local { window } => Some(window),
        }
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.framing, self.max_len)
    }
}

/// `⌈8·width/3⌉`
pub fn swiglu_width(width: usize) -> usize {
    (8 * width).div_ceil(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        EncoderConfig::esm2_style(2, 32, 4).validate().unwrap();
        EncoderConfig::protein_bert2(12, 512, 8).validate().unwrap();
        assert_eq!(EncoderConfig::protein_bert2(2, 64, 4).window(0), Some(256));
        assert_eq!(EncoderConfig::protein_bert2(2, 64, 4).window(1), None);
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut c = EncoderConfig::esm2_style(2, 30, 4);
        assert!(c.validate().is_err());
        c.hidden_size = 32;
        c.attention_pattern = AttentionPattern::Local { window: 0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn swiglu_expansion() {
        assert_eq!(swiglu_width(32), 86);
        assert_eq!(swiglu_width(3), 8);
    }

    #[test]
    fn json_round_trip() {
        let c = EncoderConfig::protein_bert2(2, 32, 4);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<EncoderConfig>(&s).unwrap(), c);
    }
}

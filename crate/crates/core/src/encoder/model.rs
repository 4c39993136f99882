use super::config::{ConvStem, EncoderConfig, FfnKind, NormKind, PositionKind, CONV_KERNEL, ROPE_BASE};
use crate::error::{Error, Result};
use crate::gradcore::{AttentionLayout, Graph, Var};
use crate::params::{Bound, ParamStore, Tensor};
use crate::seeds;
use crate::seqdata::TokenBatch;

/// Final-layer hidden states laid out as `(batch · len) × hidden`.
#[derive(Debug, Clone, Copy)]
pub struct Hidden {
    pub var: Var,
    pub batch: usize,
    pub len: usize,
    pub hidden: usize,
}

fn norm_names(cfg: &EncoderConfig, prefix: &str) -> Vec<(String, Tensor)> {
    let h = cfg.hidden_size;
    let mut v = vec![(format!("{prefix}.gain"), Tensor::filled(&[h], 1.0))];
    if cfg.norm_kind == NormKind::LayerNorm {
        v.push((format!("{prefix}.bias"), Tensor::zeros(&[h])));
    }
    v
}

/// Deterministic initialization of encoder and MLM-head parameters.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = seeds::rng(seed, seeds::tag::INIT, 0);
    let (h, v, f) = (cfg.hidden_size, cfg.vocab_size, cfg.ffn_width());
    let fan_in = |n: usize| 1.0 / (n as f64).sqrt();
    let resid = fan_in(2 * cfg.n_layers);
    let mut p = ParamStore::new();
    let rng = &mut rng;

    p.insert("embed.tokens", Tensor::normal(&[v, h], 1.0, rng));
    if cfg.position_kind == PositionKind::Learned {
        p.insert("embed.positions", Tensor::normal(&[cfg.max_len, h], 0.1, rng));
    }
    if let ConvStem::DepthwiseSeparable { n_layers } = cfg.conv_stem {
        for i in 0..n_layers {
            p.insert(format!("stem.{i}.depthwise"), Tensor::normal(&[CONV_KERNEL, h], fan_in(CONV_KERNEL), rng));
            p.insert(format!("stem.{i}.pointwise"), Tensor::normal(&[h, h], 0.5 * fan_in(h), rng));
        }
    }
    for l in 0..cfg.n_layers {
        let pre = format!("layers.{l}");
        for (n, t) in norm_names(cfg, &format!("{pre}.attn_norm")) {
            p.insert(n, t);
        }
        for w in ["wq", "wk", "wv"] {
            p.insert(format!("{pre}.attn.{w}"), Tensor::normal(&[h, h], fan_in(h), rng));
        }
        p.insert(format!("{pre}.attn.wo"), Tensor::normal(&[h, h], fan_in(h) * resid, rng));
        for (n, t) in norm_names(cfg, &format!("{pre}.ffn_norm")) {
            p.insert(n, t);
        }
        match cfg.ffn_kind {
            FfnKind::GeluMlp => {
                p.insert(format!("{pre}.ffn.w_in"), Tensor::normal(&[h, f], fan_in(h), rng));
                p.insert(format!("{pre}.ffn.b_in"), Tensor::zeros(&[f]));
                p.insert(format!("{pre}.ffn.w_out"), Tensor::normal(&[f, h], fan_in(f) * resid, rng));
                p.insert(format!("{pre}.ffn.b_out"), Tensor::zeros(&[h]));
            }
            FfnKind::Swiglu => {
                p.insert(format!("{pre}.ffn.w_gate"), Tensor::normal(&[h, f], fan_in(h), rng));
                p.insert(format!("{pre}.ffn.w_up"), Tensor::normal(&[h, f], fan_in(h), rng));
                p.insert(format!("{pre}.ffn.w_down"), Tensor::normal(&[f, h], fan_in(f) * resid, rng));
            }
        }
    }
    for (n, t) in norm_names(cfg, "final_norm") {
        p.insert(n, t);
    }
    p.insert("mlm_head.weight", Tensor::normal(&[h, v], fan_in(h), rng));
    p.insert("mlm_head.bias", Tensor::zeros(&[v]));
    Ok(p)
}

/// Closed-form parameter count for a configuration.
pub fn param_count(cfg: &EncoderConfig) -> usize {
    let (h, v, f) = (cfg.hidden_size, cfg.vocab_size, cfg.ffn_width());
    let norm = if cfg.norm_kind == NormKind::LayerNorm { 2 * h } else { h };
    let mut n = v * h + h * v + v + norm;
    if cfg.position_kind == PositionKind::Learned {
        n += cfg.max_len * h;
    }
    if let ConvStem::DepthwiseSeparable { n_layers } = cfg.conv_stem {
        n += n_layers * (CONV_KERNEL * h + h * h);
    }
    let ffn = match cfg.ffn_kind {
        FfnKind::GeluMlp => 2 * h * f + f + h,
        FfnKind::Swiglu => 3 * h * f,
    };
    n + cfg.n_layers * (2 * norm + 4 * h * h + ffn)
}

fn tag_layer(layer: &str, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{layer}: {op}"),
        },
        other => other,
    }
}

fn norm(g: &mut Graph, p: &Bound, cfg: &EncoderConfig, prefix: &str, x: Var) -> Result<Var> {
    let gain = p.get(&format!("{prefix}.gain"))?;
    match cfg.norm_kind {
        NormKind::LayerNorm => {
            let y = g.layer_norm(x, cfg.norm_eps)?;
            let y = g.mul_row(y, gain)?;
            g.add_row(y, p.get(&format!("{prefix}.bias"))?)
        }
        NormKind::RmsNorm => {
            let y = g.rms_norm(x, cfg.norm_eps)?;
            g.mul_row(y, gain)
        }
    }
}

fn ffn(g: &mut Graph, p: &Bound, cfg: &EncoderConfig, prefix: &str, x: Var) -> Result<Var> {
    match cfg.ffn_kind {
        FfnKind::GeluMlp => {
            let a = g.matmul(x, p.get(&format!("{prefix}.w_in"))?)?;
            let a = g.add_row(a, p.get(&format!("{prefix}.b_in"))?)?;
            let a = g.gelu(a)?;
            let o = g.matmul(a, p.get(&format!("{prefix}.w_out"))?)?;
            g.add_row(o, p.get(&format!("{prefix}.b_out"))?)
        }
        FfnKind::Swiglu => swiglu(
            g,
            x,
            p.get(&format!("{prefix}.w_gate"))?,
            p.get(&format!("{prefix}.w_up"))?,
            p.get(&format!("{prefix}.w_down"))?,
        ),
    }
}

/// `(silu(x·W_gate) ⊙ x·W_up) · W_down`, bias-free.
pub fn swiglu(g: &mut Graph, x: Var, w_gate: Var, w_up: Var, w_down: Var) -> Result<Var> {
    let gate = g.matmul(x, w_gate)?;
    let gate = g.silu(gate)?;
    let up = g.matmul(x, w_up)?;
    let a = g.mul(gate, up)?;
    g.matmul(a, w_down)
}

/// Bidirectional encoder forward pass over a padded batch. Padding rows are
/// excluded from attention normalization and zeroed before the conv stem.
pub fn forward(g: &mut Graph, p: &Bound, cfg: &EncoderConfig, batch: &TokenBatch) -> Result<Hidden> {
    let (b, len, h) = (batch.batch, batch.len, cfg.hidden_size);
    if len > cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "batch length {len} exceeds max_len {}",
            cfg.max_len
        )));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::InvalidArgument(format!("token id {bad} >= vocab {}", cfg.vocab_size)));
    }
    let row_mask: Vec<f64> = batch.attention_mask.iter().map(|&m| f64::from(u8::from(m))).collect();

    let mut embed = || -> Result<Var> {
        let mut x = g.embedding(p.get("embed.tokens")?, &batch.ids)?;
        if cfg.position_kind == PositionKind::Learned {
            let pos: Vec<usize> = (0..b * len).map(|r| r % len).collect();
            let pe = g.embedding(p.get("embed.positions")?, &pos)?;
            x = g.add(x, pe)?;
        }
        x = g.scale_rows(x, &row_mask)?;
        if let ConvStem::DepthwiseSeparable { n_layers } = cfg.conv_stem {
            for i in 0..n_layers {
                let d = g.depthwise_conv(x, p.get(&format!("stem.{i}.depthwise"))?, b, len)?;
                let d = g.silu(d)?;
                let pw = g.matmul(d, p.get(&format!("stem.{i}.pointwise"))?)?;
                let pw = g.scale_rows(pw, &row_mask)?;
                x = g.add(x, pw)?;
            }
        }
        Ok(x)
    };
    let mut x = embed().map_err(|e| tag_layer("embedding", e))?;

    for l in 0..cfg.n_layers {
        let pre = format!("layers.{l}");
        let mut layer = || -> Result<Var> {
            let hn = norm(g, p, cfg, &format!("{pre}.attn_norm"), x)?;
            let mut q = g.matmul(hn, p.get(&format!("{pre}.attn.wq"))?)?;
            let mut k = g.matmul(hn, p.get(&format!("{pre}.attn.wk"))?)?;
            let v = g.matmul(hn, p.get(&format!("{pre}.attn.wv"))?)?;
            if cfg.position_kind == PositionKind::Rope {
                q = g.rope(q, len, cfg.n_heads, ROPE_BASE)?;
                k = g.rope(k, len, cfg.n_heads, ROPE_BASE)?;
            }
            let layout = AttentionLayout {
                batch: b,
                len,
                n_heads: cfg.n_heads,
                window: cfg.window(l),
                key_mask: batch.attention_mask.clone(),
            };
            let a = g.attention(q, k, v, layout)?;
            let o = g.matmul(a, p.get(&format!("{pre}.attn.wo"))?)?;
            let x1 = g.add(x, o)?;
            let hn = norm(g, p, cfg, &format!("{pre}.ffn_norm"), x1)?;
            let f = ffn(g, p, cfg, &format!("{pre}.ffn"), hn)?;
            g.add(x1, f)
        };
        x = layer().map_err(|e| tag_layer(&pre, e))?;
    }
    let out = norm(g, p, cfg, "final_norm", x).map_err(|e| tag_layer("final_norm", e))?;
    Ok(Hidden {
        var: out,
        batch: b,
        len,
        hidden: h,
    })
}

/// MLM logits at the given flat grid rows.
pub fn mlm_logits(g: &mut Graph, p: &Bound, hidden: &Hidden, rows: &[usize]) -> Result<Var> {
    let sel = g.gather_rows(hidden.var, rows)?;
    let logits = g.matmul(sel, p.get("mlm_head.weight")?)?;
    g.add_row(logits, p.get("mlm_head.bias")?)
}

/// Forward pass without gradient tracking; returns hidden values.
pub fn encode(params: &ParamStore, cfg: &EncoderConfig, batch: &TokenBatch) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false)?;
    let h = forward(&mut g, &bound, cfg, batch)?;
    Ok(g.value(h.var).to_vec())
}

#[cfg(test)]
pub(crate) fn random_batch(rng: &mut impl rand::Rng, lengths: &[usize], framing: bool) -> TokenBatch {
    use crate::seqdata::{Tokenizer, CANONICAL};
    let t = Tokenizer::new(framing, 512);
    let seqs: Vec<Vec<usize>> = lengths
        .iter()
        .map(|&n| {
            let s: String = (0..n).map(|_| CANONICAL[rng.random_range(0..20)] as char).collect();
            t.tokenize(&s).unwrap()
        })
        .collect();
    TokenBatch::from_sequences(&seqs, 512).unwrap()
}

#[cfg(test)]
mod tests {
    use super::super::config::AttentionPattern;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn configs() -> Vec<EncoderConfig> {
        let mut learned = EncoderConfig::esm2_style(2, 16, 4);
        learned.position_kind = PositionKind::Learned;
        learned.max_len = 64;
        let mut pb2 = EncoderConfig::protein_bert2(2, 16, 4);
        pb2.attention_pattern = AttentionPattern::AlternatingLocalGlobal { window: 3 };
        vec![EncoderConfig::esm2_style(2, 16, 4), learned, pb2]
    }

    #[test]
    fn parameter_count_is_closed_form_and_init_deterministic() {
        for cfg in configs() {
            let p = init_params(&cfg, 5).unwrap();
            assert_eq!(p.n_scalars(), param_count(&cfg));
            assert_eq!(p, init_params(&cfg, 5).unwrap());
            assert_ne!(p, init_params(&cfg, 6).unwrap());
        }
    }

    #[test]
    fn batch_order_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in configs() {
            let params = init_params(&cfg, 3).unwrap();
            let batch = random_batch(&mut rng, &[7, 4, 9], cfg.framing);
            let out = encode(&params, &cfg, &batch).unwrap();
            // reverse the batch order
            let per = batch.len;
            let mut seqs: Vec<Vec<usize>> = (0..batch.batch)
                .map(|b| batch.ids[b * per..b * per + batch.lengths[b]].to_vec())
                .collect();
            seqs.reverse();
            let rev = TokenBatch::from_sequences(&seqs, 512).unwrap();
            let out_rev = encode(&params, &cfg, &rev).unwrap();
            let h = cfg.hidden_size;
            for b in 0..3 {
                for i in 0..batch.lengths[b] {
                    let a = &out[(b * per + i) * h..][..h];
                    let r = &out_rev[((2 - b) * per + i) * h..][..h];
                    assert_eq!(a, r);
                }
            }
        }
    }

    #[test]
    fn padding_tail_does_not_change_real_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for cfg in configs() {
            let params = init_params(&cfg, 4).unwrap();
            let single = random_batch(&mut rng, &[6], cfg.framing);
            let alone = encode(&params, &cfg, &single).unwrap();
            // same sequence padded next to a longer neighbour
            let longer = random_batch(&mut rng, &[15], cfg.framing);
            let seqs = vec![single.ids.clone(), longer.ids.clone()];
            let padded = TokenBatch::from_sequences(&seqs, 512).unwrap();
            let out = encode(&params, &cfg, &padded).unwrap();
            let n = single.len * cfg.hidden_size;
            for (a, b) in alone.iter().zip(&out[..n]) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn local_window_limits_receptive_field() {
        let mut cfg = EncoderConfig::esm2_style(1, 16, 2);
        cfg.attention_pattern = AttentionPattern::Local { window: 2 };
        cfg.framing = false;
        let params = init_params(&cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random_batch(&mut rng, &[12], false);
        let out = encode(&params, &cfg, &base).unwrap();
        let h = cfg.hidden_size;
        let p = 5;
        for far in [0, 1, 2, 3, 5, 7, 8, 11] {
            let mut ids = base.ids.clone();
            ids[far] = if ids[far] == 5 { 6 } else { 5 };
            let changed = encode(&params, &cfg, &base.with_ids(ids)).unwrap();
            let same = out[p * h..(p + 1) * h] == changed[p * h..(p + 1) * h];
            assert_eq!(same, far.abs_diff(p) > 2, "token at {far}");
        }
    }

    #[test]
    fn protein_bert2_full_geometry_runs() {
        let cfg = EncoderConfig::protein_bert2(2, 32, 4);
        assert_eq!(cfg.attention_pattern, AttentionPattern::AlternatingLocalGlobal { window: 256 });
        assert_eq!(cfg.conv_stem, ConvStem::DepthwiseSeparable { n_layers: 3 });
        let params = init_params(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, &[300, 20], false);
        let out = encode(&params, &cfg, &batch).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_out_of_vocab_ids() {
        let cfg = EncoderConfig::esm2_style(1, 8, 2);
        let params = init_params(&cfg, 1).unwrap();
        let batch = TokenBatch::from_sequences(&[vec![999]], 512).unwrap();
        assert!(encode(&params, &cfg, &batch).is_err());
    }
}

//! Bidirectional transformer encoder with configurable normalization,
//! feed-forward, position encoding, attention pattern and conv stem.

pub mod checkpoint;
mod config;
mod model;
mod pool;

pub use config::{
    swiglu_width, AttentionPattern, ConvStem, EncoderConfig, FfnKind, NormKind, PositionKind, CONV_KERNEL, ROPE_BASE,
};
pub use model::{encode, forward, init_params, mlm_logits, param_count, swiglu, Hidden};
pub use pool::{mean_pool, PoolOptions};

#[cfg(test)]
pub(crate) use model::random_batch;

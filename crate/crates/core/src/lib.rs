pub mod blob;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod fsutil;
pub mod gradcore;
pub mod objectives;
pub mod params;
pub mod seeds;
pub mod seqdata;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

//! Experiment plumbing shared by the `mlmjepa` binary: the experiment spec,
//! the pretrain → embed → probe → report pipeline, and exit-code mapping.

pub mod experiment;

use mlmjepa::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Environment variable that supplies the output root when `--out` is absent.
pub const OUT_ROOT_ENV: &str = "MLMJEPA_OUT_ROOT";

/// Process exit code for a failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => EXIT_NUMERICAL,
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Shape { .. }
        | Error::Data(_)
        | Error::Io { .. }
        | Error::TooManyMalformed { .. }
        | Error::SingleClass { .. }
        | Error::MisalignedTasks { .. }
        | Error::Undefined(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

use alloc::string::String;
use alloc::vec::Vec;

use crate::scene::ConfigViolation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("distance {distance} m is outside the histogram range [0, {max} m)")]
    DistanceOutOfRange { distance: f64, max: f64 },

    #[error("bin index {index} is outside 1..={n_bins}")]
    BinOutOfRange { index: usize, n_bins: usize },

    #[error("invalid sensor configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    /// A rendered direction grazes the plane or hits it beyond the
    /// unambiguous range.
    #[error("plane is not renderable along direction (polar {polar_rad} rad, azimuth {azimuth_rad} rad): {reason}")]
    PlaneNotRenderable {
        polar_rad: f64,
        azimuth_rad: f64,
        reason: &'static str,
    },

    #[error("{missed} of {total} rays missed the depth map")]
    TooManyMisses { missed: u64, total: u64 },

    #[error("histogram has no signal above its background floor")]
    NoSignal,

    #[error("no plane tilt reproduces distance {distance} m at viewing angle {gamma_rad} rad")]
    NoAngleSolution { distance: f64, gamma_rad: f64 },

    #[error("bin {bin} is saturated: every remaining cycle detected a photon there")]
    Saturated { bin: usize },

    #[error("optimizer diverged after {iterations} iterations (loss {initial_loss} -> {final_loss})")]
    Diverged {
        iterations: usize,
        initial_loss: f64,
        final_loss: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error comes from numerics (rendering, inversion,
    /// optimization) rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PlaneNotRenderable { .. }
                | Error::TooManyMisses { .. }
                | Error::NoSignal
                | Error::NoAngleSolution { .. }
                | Error::Saturated { .. }
                | Error::Diverged { .. }
        )
    }
}

fn join_violations(v: &[ConfigViolation]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, item) in v.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{item}");
    }
    out
}

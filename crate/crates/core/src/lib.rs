//! Transient histograms of scenes lit by a pulsed flood illuminator.
//!
//! A transient histogram is the time-of-flight response of a whole scene
//! collapsed into a single N-bin vector: every visible surface patch adds
//! light to the bin that matches its round-trip distance. This crate
//! contains the pure numerical parts of working with such histograms:
//!
//! - [`scene`]: sensor configuration, histogram types, bin/distance maps.
//! - [`render`]: deterministic and Monte-Carlo forward rendering, including
//!   a soft-binned renderer with analytic parameter gradients.
//! - [`spad`]: single-photon (SPAD) acquisition with pile-up, free-running
//!   acquisition with dead time, and flux estimators.
//! - [`estimate`]: planar scene recovery from a histogram, both by a
//!   closed-form edge estimator and by analysis-by-synthesis.
//! - [`metrics`] and [`sweep`]: depth error metrics, BerHu loss and the
//!   parameter sweep comparing both plane estimators.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and parallel sweeps live in the `transient` companion crate.

#![no_std]
// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod estimate;
pub mod fourier;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod spad;
pub mod sweep;

pub use error::{Error, Result};
pub use estimate::{AbsConfig, EdgeTriple, EstimateMethod, PlaneEstimate};
pub use metrics::DepthMetrics;
pub use render::{RenderSettings, SoftRenderOutput};
pub use scene::{
    AcquisitionMode, DepthMapScene, PlaneParams, PulseKernel, SensorConfig, SpadHistogram,
    TransientHistogram, SPEED_OF_LIGHT,
};
pub use sweep::{Noise, SweepConfig, SweepReport};


//! Peak detection for comprehensive two-dimensional GC×GC-MS data.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`] reads the scan stream and reshapes it into the
//!    first-dimension × second-dimension retention-time grid.
//! 2. [`neb`] fits a normal–exponential–Bernoulli model to the TIC vector by
//!    EM, scores every scan with posterior odds of carrying signal, and
//!    returns baseline-corrected, denoised intensities.
//! 3. [`segment`] cuts each first-dimension row of the processed matrix into
//!    maximal nonzero peak regions and bounds the number of peaks per region
//!    with a first-derivative test.
//! 4. [`mixfit`] fits mixtures of one of the five [`shapes`] families to each
//!    normalized region and turns components into [`mixfit::Peak`]s whose area
//!    is the 95% HPD length.
//! 5. [`merge`] groups peaks from adjacent regions and collapses spectrally
//!    similar peaks into a representative.
//!
//! [`optimize`] searches the Bayes-factor cutoff and shape family by trial and
//! error, [`harness`] generates seeded synthetic chromatograms with planted
//! peaks and scores detections, and [`pipeline`] wires everything into the
//! batch run used by the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod ingest;
pub mod merge;
pub mod mixfit;
pub mod neb;
pub mod optim;
pub mod optimize;
pub mod pipeline;
pub mod quadrature;
pub mod segment;
pub mod shapes;
pub mod special;

pub use error::{Error, Result};
pub use ingest::{ChromatogramRun, Geometry, Spectrum, TicMatrix};
pub use merge::PeakTable;
pub use mixfit::{Objective, Peak, PeakModelFit};
pub use neb::{EmConfig, NebFit, NebParams};
pub use segment::PeakRegion;
pub use shapes::{ComponentParams, ShapeFamily};

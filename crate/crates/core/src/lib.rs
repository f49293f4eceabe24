//! Simulation and estimation toolkit for a continuously driven quantum-dot
//! single-photon source.
//!
//! The crate is organised by physical subsystem:
//!
//! * [`dephasing`] — charge-trap spectral diffusion model giving the
//!   coherence time versus injection current.
//! * [`correlations`] — ideal second-order correlation functions for the
//!   HBT and delayed Mach-Zehnder geometries, and the post-selected HOM
//!   visibility.
//! * [`response`] — detector response kernels, convolution and the
//!   resolution-limited visibility surface.
//! * [`montecarlo`] — photon-stream simulator producing coincidence
//!   histograms, used as an independent check on the analytic curves.
//! * [`estimation`] — bounded simplex fits of the model to measured data.
//! * [`cli`] — JSON configuration, CSV ingestion/emission and the
//!   subcommands behind the `qd-hom` binary.
//!
//! Units are fixed throughout: time in ps, energy in µeV (phonon energies
//! in meV), current in µA, temperature in K.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constants;
pub mod correlations;
pub mod dephasing;
pub mod error;
pub mod estimation;
pub mod montecarlo;
pub mod optimize;
pub mod response;

pub use correlations::{InterferometerSpec, SourceSpec};
pub use dephasing::{CoherencePoint, TrapModelParams};
pub use error::{Error, Result};
pub use montecarlo::{CoincidenceHistogram, Simulation, SimulationMode, StreamParams};

pub use response::{ResponseKernel, SampledCurve};

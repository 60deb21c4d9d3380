//! Discovery and inversion of 1D (visco)elastic wave equations.
//!
//! The crate alternates two phases over sparse, noisy wavefield measurements:
//!
//! - **discovery**: sequential-threshold ridge regression over a fixed
//!   library of 60 candidate terms picks the active right-hand-side terms and
//!   scalar coefficients ([`library`], [`regression`]);
//! - **embedding**: the discovered equation is unrolled as a differentiable
//!   finite-difference recurrence whose coefficient fields are trained against
//!   the measurements with discrete-adjoint gradients ([`embedding`]).
//!
//! [`simulator`] generates ground-truth wavefields with the same recurrence,
//! [`sampling`] turns them into coarse noisy measurements and
//! [`pipeline`] ties everything together and writes reports.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod grid;
pub mod library;
pub mod medium;
pub mod pipeline;
pub mod regression;
pub mod sampling;
pub mod simulator;
pub mod stencil;

pub use embedding::{DiscoveredEquation, OptimizerConfig};
pub use error::{Error, Result};
pub use grid::{Field, Grid1D, Wavefield};
pub use library::{Deriv, TermDescriptor};
pub use medium::{cfl_margin, ricker_profile, BoundaryCondition, BoundarySpec, MediumSpec, SourceSpec};
pub use pipeline::{ExperimentConfig, Report};
pub use sampling::MeasurementSet;
pub use simulator::SimConfig;

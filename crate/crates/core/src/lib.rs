//! Simulation and parameter-estimation toolkit for single-pass, fully
//! guided-wave squeezed-light experiments.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaussian`]: zero-mean Gaussian states of one or two modes with the
//!   squeezing, rotation, loss and balanced beam-splitter maps.
//! - [`chain`]: the experiment chain (pump budget, `r = mu * sqrt(P)`, the
//!   lossy homodyne variance model) and its inversions.
//! - [`trace`]: phase-scanned homodyne noise-power traces with spectrum
//!   analyzer RBW/VBW statistics.
//! - [`estimation`]: weighted Levenberg-Marquardt fit of `(mu, eta)` to
//!   squeezing / anti-squeezing versus pump power.
//! - [`entanglement`]: two-squeezer EPR source and the Duan correlation
//!   variance.
//! - [`cli`]: configuration, CSV formats and the `squeezelab` subcommands.
//!
//! All quadrature variances are normalised to shot noise (vacuum = 1, 0 dB).

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod entanglement;
pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod trace;

pub use chain::{LossBudget, PumpSqueezeModel, SourceSpecs};
pub use entanglement::{DuanReport, Squeezer};
pub use error::{Error, Result};
pub use estimation::{DataSet, DataRow, FitOptions, FitResult};
pub use gaussian::{from_db, to_db, GaussianState, SymplecticOp};
pub use trace::{Extrema, ScanConfig, Trace};

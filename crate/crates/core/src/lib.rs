//! Scan statistics for hypothesis tests whose nuisance parameter exists only
//! under the alternative.
//!
//! A model is profiled over a grid of the nuisance parameter, giving a
//! sequence of sub-test statistics. The maximum of that sequence is turned
//! into a global p-value with an upcrossing bound whose single unknown, the
//! expected number of upcrossings of a low threshold, is estimated from a
//! small seeded Monte Carlo ensemble and extrapolated to the observed level.
//!
//! Module map:
//!
//! * [`numerics`]: special functions, quadrature and bounded optimizers.
//! * [`grid`]: scan grids, traces, upcrossing and exceedance counts.
//! * [`bound`]: process families, the upcrossing bound, Bonferroni, σ conversion.
//! * [`models`]: the [`models::SubTestModel`] contract and the three shipped models.
//! * [`montecarlo`]: seeded null ensembles, elbow curves, the brute-force oracle.
//! * [`diagnostics`]: normalized score sequences, Berman curves, ratio curves.
//! * [`pipeline`]: scan + ensemble + bound in one call.
//! * [`io`]: the CSV and JSON file formats.

pub mod bound;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod grid;
pub mod io;
pub mod models;
pub mod montecarlo;
pub mod numerics;
pub mod pipeline;

pub use bound::{BoundReport, ProcessFamily};
pub use error::{Result, TohmError};
pub use exec::Execution;
pub use grid::{ProcessTrace, ScanGrid};

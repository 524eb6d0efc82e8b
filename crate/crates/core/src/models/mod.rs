//! The sub-test model contract and the shipped models.
//!
//! A model tests a scalar parameter `eta` against its null value while a
//! second parameter (the grid parameter) is fixed at each grid point. The
//! remaining nuisance parameters are profiled out.

mod breakpoint;
mod bump;
mod mixture;
mod nonnested;

pub use breakpoint::{BreakpointModel, GroupedBinomial};
pub use bump::BumpModel;
pub use mixture::Events;
pub use nonnested::{DarkMatterSampler, NonNestedModel};

use serde::{Deserialize, Serialize};

use crate::bound::ProcessFamily;
use crate::error::{Result, TohmError};
use crate::grid::{ProcessTrace, ScanGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestDirection {
    /// H0: eta = 0 on the lower boundary.
    Detection,
    /// H0: eta = 1 on the upper boundary.
    Exclusion,
    /// H0: eta = 0 in the interior, signed statistic.
    TwoSided,
}

impl TestDirection {
    pub fn eta_null(self) -> f64 {
        match self {
            TestDirection::Exclusion => 1.0,
            _ => 0.0,
        }
    }
}

/// Null maximum likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullFit {
    pub nuisance: Vec<f64>,
    pub loglik: f64,
}

/// Fit with the grid parameter held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub at: f64,
    pub eta: f64,
    pub nuisance: Vec<f64>,
    pub loglik: f64,
    /// eta pinned at the boundary opposite to the null.
    pub degenerate: bool,
}

pub trait SubTestModel: Send + Sync {
    type Data: Send + Sync;

    fn family(&self) -> ProcessFamily;

    fn direction(&self) -> TestDirection;

    /// Admissible range of the grid parameter.
    fn search_range(&self) -> (f64, f64);

    /// Names of the nuisance coordinates, in order.
    fn nuisance_names(&self) -> Vec<&'static str>;

    /// Draws a dataset of size `n` from the null model.
    fn simulate_null(&self, nuisance: &[f64], n: usize, seed: u64) -> Result<Self::Data>;

    fn fit_null(&self, data: &Self::Data) -> Result<NullFit>;

    fn fit_profile(
        &self,
        data: &Self::Data,
        at: f64,
        null: &NullFit,
        warm: Option<&ProfileFit>,
    ) -> Result<ProfileFit>;

    /// Full log-likelihood. May be non-finite outside the parameter space.
    fn loglik(&self, data: &Self::Data, at: f64, eta: f64, nuisance: &[f64]) -> f64;

    fn eta_null(&self) -> f64 {
        self.direction().eta_null()
    }

    /// T = 2(l1 - l0), or its signed root for two-sided tests.
    fn subtest_stat(&self, loglik0: f64, fit: &ProfileFit) -> f64 {
        subtest_stat(self.direction(), loglik0, fit.loglik, fit.eta)
    }
}

/// Likelihood ratio statistic with the null value's convention: exactly 0
/// when eta sits at its null value, tiny negative differences clipped.
pub fn subtest_stat(direction: TestDirection, loglik0: f64, loglik1: f64, eta_hat: f64) -> f64 {
    let eta0 = direction.eta_null();
    if eta_hat == eta0 {
        return 0.0;
    }
    let t = (2.0 * (loglik1 - loglik0)).max(0.0);
    match direction {
        TestDirection::TwoSided => (eta_hat - eta0).signum() * t.sqrt(),
        _ => t,
    }
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub trace: ProcessTrace,
    pub fits: Vec<ProfileFit>,
    pub null: NullFit,
}

impl ScanResult {
    pub fn degenerate_points(&self) -> usize {
        self.fits.iter().filter(|f| f.degenerate).count()
    }
}

pub(crate) fn check_grid_in_range(grid: &ScanGrid, range: (f64, f64)) -> Result<()> {
    let slack = 1e-9 * (range.1 - range.0).abs().max(1.0);
    if grid.lower() < range.0 - slack || grid.upper() > range.1 + slack {
        return Err(TohmError::invalid(format!(
            "grid [{}, {}] leaves the search range [{}, {}]",
            grid.lower(),
            grid.upper(),
            range.0,
            range.1
        )));
    }
    Ok(())
}

/// Fits the null once, then profiles at each grid point, warm-starting from
/// the neighbouring solution.
pub fn scan<M: SubTestModel + ?Sized>(
    model: &M,
    data: &M::Data,
    grid: &ScanGrid,
) -> Result<ScanResult> {
    check_grid_in_range(grid, model.search_range())?;
    let null = model.fit_null(data)?;
    scan_with_null(model, data, grid, null)
}

pub fn scan_with_null<M: SubTestModel + ?Sized>(
    model: &M,
    data: &M::Data,
    grid: &ScanGrid,
    null: NullFit,
) -> Result<ScanResult> {
    let mut fits: Vec<ProfileFit> = Vec::with_capacity(grid.resolution());
    let mut values = Vec::with_capacity(grid.resolution());
    for &at in grid.points() {
        let fit = model
            .fit_profile(data, at, &null, fits.last())
            .map_err(|e| match e {
                TohmError::FitFailure { .. } => e,
                other => TohmError::FitFailure {
                    theta: at,
                    reason: other.to_string(),
                },
            })?;
        let w = model.subtest_stat(null.loglik, &fit);
        if !w.is_finite() {
            return Err(TohmError::FitFailure {
                theta: at,
                reason: "non-finite sub-test statistic".into(),
            });
        }
        values.push(w);
        fits.push(fit);
    }
    Ok(ScanResult {
        trace: ProcessTrace::new(grid.clone(), values)?,
        fits,
        null,
    })
}

pub(crate) fn check_positive_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(TohmError::invalid("sample size must be >= 1"))
    } else {
        Ok(())
    }
}

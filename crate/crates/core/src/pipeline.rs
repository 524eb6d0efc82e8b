//! Observed scan, null ensemble and bound in one call.

use crate::bound::{suggest_c0, BoundReport};
use crate::error::{Result, TohmError};
use crate::grid::ScanGrid;
use crate::models::{scan, ScanResult, SubTestModel};
use crate::montecarlo::{estimate_upcrossings, EnsembleSettings, McEnsemble, ModelNull, NullSource};

/// How the reference level is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum C0Choice {
    Fixed(f64),
    /// Value maximizing a(c) for the family.
    Auto,
}

impl C0Choice {
    pub fn resolve(self, family: crate::bound::ProcessFamily) -> Result<f64> {
        match self {
            C0Choice::Fixed(c) if c.is_finite() => Ok(c),
            C0Choice::Fixed(c) => Err(TohmError::invalid(format!("c0 must be finite, got {c}"))),
            C0Choice::Auto => suggest_c0(family)
                .ok_or_else(|| TohmError::invalid(format!("no automatic c0 for {family}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisSettings {
    pub c0: C0Choice,
    pub ensemble: EnsembleSettings,
    /// Nuisance values for the null simulations; the null MLE when `None`.
    pub null_nuisance: Option<Vec<f64>>,
    pub keep_traces: bool,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub scan: ScanResult,
    pub nuisance: Vec<f64>,
    pub ensemble: McEnsemble,
    pub report: BoundReport,
}

pub fn analyze<M: SubTestModel + Clone>(
    model: &M,
    data: &M::Data,
    grid: &ScanGrid,
    settings: &AnalysisSettings,
) -> Result<Analysis> {
    let observed = scan(model, data, grid)?;
    let nuisance = settings
        .null_nuisance
        .clone()
        .unwrap_or_else(|| observed.null.nuisance.clone());
    let c0 = settings.c0.resolve(model.family())?;
    let null = ModelNull::new(model.clone(), nuisance.clone());
    let bound = null.bind(grid)?;
    let ensemble = estimate_upcrossings(bound.as_ref(), c0, &settings.ensemble, settings.keep_traces)?;
    let report = BoundReport::from_trace(
        model.family(),
        &observed.trace,
        c0,
        ensemble.e_upcrossings,
        ensemble.mc_std_error,
    )?;
    Ok(Analysis {
        scan: observed,
        nuisance,
        ensemble,
        report,
    })
}

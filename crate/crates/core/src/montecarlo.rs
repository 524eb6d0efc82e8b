//! Seeded null ensembles: E[N_c0] with its Monte Carlo error, elbow curves
//! over resolutions, c0 sensitivity paths and the brute-force oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bound::{observed_max, ProcessFamily};
use crate::diagnostics::score_and_information;
use crate::error::{Result, TohmError};
use crate::exec::{map_replicates, replicate_seed, Execution};
use crate::grid::{exceedances_unchecked, upcrossings_unchecked, ProcessTrace, ScanGrid};
use crate::models::{scan, SubTestModel};

/// Something that produces null traces on a fixed grid.
pub trait BoundSource: Send + Sync {
    fn grid(&self) -> &ScanGrid;

    fn family(&self) -> ProcessFamily;

    fn trace(&self, n_obs: usize, seed: u64) -> Result<ProcessTrace>;

    /// Score sequence of one null replicate, on any per-point scale since
    /// only its correlations are used; NaN marks invalid entries.
    fn score(&self, n_obs: usize, seed: u64) -> Result<Vec<f64>>;
}

/// A null generator not yet tied to a grid.
pub trait NullSource: Send + Sync {
    fn family(&self) -> ProcessFamily;

    fn range(&self) -> (f64, f64);

    fn bind<'a>(&'a self, grid: &ScanGrid) -> Result<Box<dyn BoundSource + 'a>>;
}

/// Parametric null of a [`SubTestModel`] at fixed nuisance values.
#[derive(Debug, Clone)]
pub struct ModelNull<M> {
    pub model: M,
    pub nuisance: Vec<f64>,
}

impl<M: SubTestModel> ModelNull<M> {
    pub fn new(model: M, nuisance: Vec<f64>) -> Self {
        ModelNull { model, nuisance }
    }
}

struct BoundModel<'a, M> {
    null: &'a ModelNull<M>,
    grid: ScanGrid,
}

impl<M: SubTestModel> NullSource for ModelNull<M> {
    fn family(&self) -> ProcessFamily {
        self.model.family()
    }

    fn range(&self) -> (f64, f64) {
        self.model.search_range()
    }

    fn bind<'a>(&'a self, grid: &ScanGrid) -> Result<Box<dyn BoundSource + 'a>> {
        crate::models::check_grid_in_range(grid, self.model.search_range())?;
        Ok(Box::new(BoundModel {
            null: self,
            grid: grid.clone(),
        }))
    }
}

impl<M: SubTestModel> BoundSource for BoundModel<'_, M> {
    fn grid(&self) -> &ScanGrid {
        &self.grid
    }

    fn family(&self) -> ProcessFamily {
        self.null.model.family()
    }

    fn trace(&self, n_obs: usize, seed: u64) -> Result<ProcessTrace> {
        let data = self.null.model.simulate_null(&self.null.nuisance, n_obs, seed)?;
        Ok(scan(&self.null.model, &data, &self.grid)?.trace)
    }

    fn score(&self, n_obs: usize, seed: u64) -> Result<Vec<f64>> {
        let data = self.null.model.simulate_null(&self.null.nuisance, n_obs, seed)?;
        let null = self.null.model.fit_null(&data)?;
        Ok(score_and_information(&self.null.model, &data, &self.grid, &null)
            .into_iter()
            .map(|(s, _)| s)
            .collect())
    }
}

/// Gaussian-based process with squared-exponential correlation
/// exp(−Δ²/2ℓ²); `ell = 0` gives independent components.
///
/// The marginal follows `family`: Z for Gaussian families, a sum of `s`
/// independent squared copies for χ²_s, and max(Z, 0)² for χ̄²₀₁.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProcess {
    pub family: ProcessFamily,
    pub range: (f64, f64),
    pub ell: f64,
}

impl SyntheticProcess {
    pub fn new(family: ProcessFamily, range: (f64, f64), ell: f64) -> Result<Self> {
        family.validate()?;
        if !(range.0 < range.1) || !range.0.is_finite() || !range.1.is_finite() {
            return Err(TohmError::invalid("synthetic range must satisfy lower < upper"));
        }
        if !(ell >= 0.0 && ell.is_finite()) {
            return Err(TohmError::invalid("correlation length must be >= 0"));
        }
        Ok(SyntheticProcess { family, range, ell })
    }

    pub fn iid(family: ProcessFamily, range: (f64, f64)) -> Result<Self> {
        Self::new(family, range, 0.0)
    }
}

struct BoundSynthetic {
    family: ProcessFamily,
    grid: ScanGrid,
    factor: Option<DMatrix<f64>>,
}

impl NullSource for SyntheticProcess {
    fn family(&self) -> ProcessFamily {
        self.family
    }

    fn range(&self) -> (f64, f64) {
        self.range
    }

    fn bind<'a>(&'a self, grid: &ScanGrid) -> Result<Box<dyn BoundSource + 'a>> {
        let factor = if self.ell > 0.0 {
            let p = grid.points();
            let r = p.len();
            let k = DMatrix::from_fn(r, r, |i, j| {
                let d = p[i] - p[j];
                (-d * d / (2.0 * self.ell * self.ell)).exp()
            });
            let eig = SymmetricEigen::new(k);
            let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            Some(eig.eigenvectors * DMatrix::from_diagonal(&roots))
        } else {
            None
        };
        Ok(Box::new(BoundSynthetic {
            family: self.family,
            grid: grid.clone(),
            factor,
        }))
    }
}

impl BoundSynthetic {
    fn gaussian(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let r = self.grid.resolution();
        let eps = DVector::from_fn(r, |_, _| StandardNormal.sample(rng));
        match &self.factor {
            Some(l) => (l * eps).iter().cloned().collect(),
            None => eps.iter().cloned().collect(),
        }
    }
}

impl BoundSource for BoundSynthetic {
    fn grid(&self) -> &ScanGrid {
        &self.grid
    }

    fn family(&self) -> ProcessFamily {
        self.family
    }

    fn trace(&self, _n_obs: usize, seed: u64) -> Result<ProcessTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = match self.family {
            ProcessFamily::GaussianOneSided | ProcessFamily::GaussianTwoSided => {
                self.gaussian(&mut rng)
            }
            ProcessFamily::ChiBar01 => self
                .gaussian(&mut rng)
                .into_iter()
                .map(|z| if z > 0.0 { z * z } else { 0.0 })
                .collect(),
            ProcessFamily::ChiSquare { s } => {
                let mut acc = vec![0.0; self.grid.resolution()];
                for _ in 0..s {
                    for (a, z) in acc.iter_mut().zip(self.gaussian(&mut rng)) {
                        *a += z * z;
                    }
                }
                acc
            }
        };
        ProcessTrace::new(self.grid.clone(), values)
    }

    fn score(&self, _n_obs: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.gaussian(&mut rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub n_replicates: usize,
    pub n_obs: usize,
    pub master_seed: u64,
    pub execution: Execution,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings {
            n_replicates: 200,
            n_obs: 1000,
            master_seed: 0,
            execution: Execution::Sequential,
        }
    }
}

impl EnsembleSettings {
    fn validate(&self, min_replicates: usize) -> Result<()> {
        if self.n_replicates < min_replicates {
            return Err(TohmError::invalid(format!(
                "need at least {min_replicates} replicates, got {}",
                self.n_replicates
            )));
        }
        if self.n_obs == 0 {
            return Err(TohmError::invalid("n_obs must be >= 1"));
        }
        Ok(())
    }
}

/// Null traces of an ensemble, in replicate order.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub traces: Vec<ProcessTrace>,
    pub failed_seeds: Vec<u64>,
    pub attempted: usize,
}

/// Failures above this fraction abort an ensemble.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

fn collect_results<T>(
    results: Vec<(u64, Result<T>)>,
    attempted: usize,
) -> Result<(Vec<T>, Vec<u64>)> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(_) => failed.push(seed),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * attempted as f64 {
        return Err(TohmError::EnsembleFailure {
            failed: failed.len(),
            total: attempted,
            seeds: failed,
        });
    }
    Ok((ok, failed))
}

pub fn simulate_traces(source: &dyn BoundSource, settings: &EnsembleSettings) -> Result<TraceSet> {
    settings.validate(1)?;
    let results = map_replicates(settings.n_replicates, settings.execution, |r| {
        let seed = replicate_seed(settings.master_seed, r as u64);
        (seed, source.trace(settings.n_obs, seed))
    });
    let (traces, failed_seeds) = collect_results(results, settings.n_replicates)?;
    Ok(TraceSet {
        traces,
        failed_seeds,
        attempted: settings.n_replicates,
    })
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEnsemble {
    pub n_replicates: usize,
    pub n_obs: usize,
    pub master_seed: u64,
    pub c0: f64,
    pub e_upcrossings: f64,
    pub mc_std_error: f64,
    #[serde(skip)]
    pub failed_seeds: Vec<u64>,
    #[serde(skip)]
    pub traces: Vec<ProcessTrace>,
}

/// The on-disk ensemble summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSummary {
    pub n_replicates: usize,
    pub n_obs: usize,
    pub master_seed: u64,
    pub c0: f64,
    pub e_upcrossings: f64,
    pub mc_std_error: f64,
}

impl McEnsemble {
    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            n_replicates: self.n_replicates,
            n_obs: self.n_obs,
            master_seed: self.master_seed,
            c0: self.c0,
            e_upcrossings: self.e_upcrossings,
            mc_std_error: self.mc_std_error,
        }
    }

    /// Builds the estimate from already simulated traces.
    pub fn from_traces(set: TraceSet, c0: f64, settings: &EnsembleSettings, keep: bool) -> Result<Self> {
        if !c0.is_finite() {
            return Err(TohmError::invalid("c0 must be finite"));
        }
        if set.traces.len() < 2 {
            return Err(TohmError::invalid("need at least two successful replicates"));
        }
        let counts: Vec<f64> = set
            .traces
            .iter()
            .map(|t| upcrossings_unchecked(t.values(), c0) as f64)
            .collect();
        let (e, se) = mean_and_se(&counts);
        Ok(McEnsemble {
            n_replicates: set.traces.len(),
            n_obs: settings.n_obs,
            master_seed: settings.master_seed,
            c0,
            e_upcrossings: e,
            mc_std_error: se,
            failed_seeds: set.failed_seeds,
            traces: if keep { set.traces } else { Vec::new() },
        })
    }
}

/// Ê[Ñ_c0] from `n_replicates` seeded null replicates.
pub fn estimate_upcrossings(
    source: &dyn BoundSource,
    c0: f64,
    settings: &EnsembleSettings,
    keep_traces: bool,
) -> Result<McEnsemble> {
    settings.validate(2)?;
    let set = simulate_traces(source, settings)?;
    McEnsemble::from_traces(set, c0, settings, keep_traces)
}

/// Upcrossing and exceedance means at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub c: f64,
    pub e_upcrossings: f64,
    pub se_upcrossings: f64,
    pub e_exceedances: f64,
    pub se_exceedances: f64,
    /// Fraction of replicates whose maximum exceeds c.
    pub p_max_above: f64,
    pub se_p_max_above: f64,
}

struct Counts {
    up: Vec<f64>,
    ex: Vec<f64>,
    max: f64,
}

fn counts_of(trace: &ProcessTrace, family: ProcessFamily, cs: &[f64]) -> Counts {
    Counts {
        up: cs.iter().map(|&c| upcrossings_unchecked(trace.values(), c) as f64).collect(),
        ex: cs.iter().map(|&c| exceedances_unchecked(trace.values(), c) as f64).collect(),
        max: observed_max(family, trace).0,
    }
}

fn aggregate(counts: &[Counts], cs: &[f64]) -> Vec<ThresholdStats> {
    let n = counts.len() as f64;
    cs.iter()
        .enumerate()
        .map(|(k, &c)| {
            let up: Vec<f64> = counts.iter().map(|x| x.up[k]).collect();
            let ex: Vec<f64> = counts.iter().map(|x| x.ex[k]).collect();
            let (eu, su) = mean_and_se(&up);
            let (ee, se) = mean_and_se(&ex);
            let p = counts.iter().filter(|x| x.max > c).count() as f64 / n;
            ThresholdStats {
                c,
                e_upcrossings: eu,
                se_upcrossings: su,
                e_exceedances: ee,
                se_exceedances: se,
                p_max_above: p,
                se_p_max_above: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

pub fn threshold_stats(set: &TraceSet, family: ProcessFamily, cs: &[f64]) -> Vec<ThresholdStats> {
    let counts: Vec<Counts> = set.traces.iter().map(|t| counts_of(t, family, cs)).collect();
    aggregate(&counts, cs)
}

/// Same statistics as [`threshold_stats`] without keeping the traces, for
/// ensembles too large to hold in memory.
pub fn threshold_stats_streamed(
    source: &dyn BoundSource,
    cs: &[f64],
    settings: &EnsembleSettings,
) -> Result<Vec<ThresholdStats>> {
    settings.validate(2)?;
    let family = source.family();
    let results = map_replicates(settings.n_replicates, settings.execution, |r| {
        let seed = replicate_seed(settings.master_seed, r as u64);
        (seed, source.trace(settings.n_obs, seed).map(|t| counts_of(&t, family, cs)))
    });
    let (counts, _) = collect_results(results, settings.n_replicates)?;
    Ok(aggregate(&counts, cs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    #[serde(rename = "R")]
    pub resolution: usize,
    pub e_upcrossings: f64,
    pub mc_err: f64,
}

impl ElbowRow {
    pub const HEADER: [&'static str; 3] = ["R", "e_upcrossings", "mc_err"];
}

/// One ensemble per resolution over the null's full range.
pub fn upcrossing_curve(
    null: &dyn NullSource,
    c0: f64,
    resolutions: &[usize],
    settings: &EnsembleSettings,
) -> Result<Vec<ElbowRow>> {
    if resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TohmError::invalid("resolutions must be strictly increasing"));
    }
    let (lo, hi) = null.range();
    resolutions
        .iter()
        .map(|&r| {
            let grid = ScanGrid::equally_spaced(lo, hi, r)?;
            let bound = null.bind(&grid)?;
            let e = estimate_upcrossings(bound.as_ref(), c0, settings, false)?;
            Ok(ElbowRow {
                resolution: r,
                e_upcrossings: e.e_upcrossings,
                mc_err: e.mc_std_error,
            })
        })
        .collect()
}

/// Default candidate c0 values for a family.
pub fn default_c0_ladder(family: ProcessFamily) -> Vec<f64> {
    let top = if family.is_gaussian() { 30 } else { 50 };
    (0..=top).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub paths: Vec<ProcessTrace>,
    /// (c0, mean upcrossings over the paths).
    pub ladder: Vec<(f64, f64)>,
    /// Ladder value with the most upcrossings (smallest on ties).
    pub recommended_c0: f64,
}

/// A few null paths for choosing c0 by eye, plus mean upcrossing counts on a ladder.
pub fn c0_sensitivity(
    source: &dyn BoundSource,
    n_paths: usize,
    n_obs: usize,
    master_seed: u64,
    execution: Execution,
    ladder: Option<&[f64]>,
) -> Result<Sensitivity> {
    if n_paths == 0 {
        return Err(TohmError::invalid("need at least one path"));
    }
    let settings = EnsembleSettings {
        n_replicates: n_paths,
        n_obs,
        master_seed,
        execution,
    };
    let set = simulate_traces(source, &settings)?;
    let ladder: Vec<f64> = match ladder {
        Some(l) => l.to_vec(),
        None => default_c0_ladder(source.family()),
    };
    let rows: Vec<(f64, f64)> = ladder
        .iter()
        .map(|&c| {
            let total: usize = set
                .traces
                .iter()
                .map(|t| upcrossings_unchecked(t.values(), c))
                .sum();
            (c, total as f64 / set.traces.len() as f64)
        })
        .collect();
    let mut best = rows[0];
    for &row in &rows[1..] {
        if row.1 > best.1 {
            best = row;
        }
    }
    Ok(Sensitivity {
        paths: set.traces,
        ladder: rows,
        recommended_c0: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub c: f64,
    pub p_hat: f64,
    pub mc_err: f64,
}

impl OracleRow {
    pub const HEADER: [&'static str; 3] = ["c", "p_hat", "mc_err"];
}

/// Fraction of null replicates whose maximum exceeds each c, with binomial errors.
pub fn oracle_curve(
    source: &dyn BoundSource,
    cs: &[f64],
    settings: &EnsembleSettings,
) -> Result<Vec<OracleRow>> {
    settings.validate(100)?;
    let set = simulate_traces(source, settings)?;
    Ok(threshold_stats(&set, source.family(), cs)
        .into_iter()
        .map(|s| OracleRow {
            c: s.c,
            p_hat: s.p_max_above,
            mc_err: s.se_p_max_above,
        })
        .collect())
}

pub fn oracle_pvalue(source: &dyn BoundSource, c: f64, settings: &EnsembleSettings) -> Result<(f64, f64)> {
    let row = oracle_curve(source, &[c], settings)?[0];
    Ok((row.p_hat, row.mc_err))
}

//! Berman-condition checks on the normalized score sequence and
//! Bonferroni/upcrossing-bound ratio curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bound::{local_pvalue, p_to_sigma, tohm_bound, ProcessFamily};
use crate::error::{Result, TohmError};
use crate::exec::{map_replicates, replicate_seed};
use crate::grid::ScanGrid;
use crate::models::{NullFit, SubTestModel};
use crate::montecarlo::{estimate_upcrossings, EnsembleSettings, NullSource};

const INITIAL_STEP: f64 = 1e-4;
const MIN_STEP: f64 = 1e-10;

/// Offsets (a, b) around a coordinate for difference quotients; central
/// when the log-likelihood is finite on both sides, else one-sided.
fn offsets<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], i: usize, h: f64) -> Option<(f64, f64)> {
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[i] += d;
        l(&y).is_finite()
    };
    match (at(h), at(-h)) {
        (true, true) => Some((h, -h)),
        (true, false) if at(2.0 * h) => Some((2.0 * h, h)),
        (false, true) if at(-2.0 * h) => Some((-h, -2.0 * h)),
        _ => None,
    }
}

fn shifted<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], moves: &[(usize, f64)]) -> f64 {
    let mut y = x.to_vec();
    for &(i, d) in moves {
        y[i] += d;
    }
    l(&y)
}

fn second_diff<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], i: usize, h: f64) -> Option<f64> {
    let (a, b) = offsets(l, x, i, h)?;
    let f0 = l(x);
    Some(if a == -b {
        (shifted(l, x, &[(i, a)]) - 2.0 * f0 + shifted(l, x, &[(i, b)])) / (a * a)
    } else {
        (shifted(l, x, &[(i, 2.0 * b)]) - 2.0 * shifted(l, x, &[(i, b)]) + f0) / (b * b)
    })
}

/// Shrinks the step for coordinate `i` until the curvature estimate
/// settles. Mixture log-likelihoods can bend on scales far below 1e-4.
fn settle_step<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], i: usize) -> Option<f64> {
    let mut h = INITIAL_STEP * x[i].abs().max(1.0);
    let mut prev = second_diff(l, x, i, h)?;
    while h > MIN_STEP {
        let next_h = h / 4.0;
        let Some(next) = second_diff(l, x, i, next_h) else {
            return Some(h);
        };
        if (next - prev).abs() <= 1e-3 * next.abs().max(1e-8) {
            return Some(next_h);
        }
        h = next_h;
        prev = next;
    }
    Some(h)
}

/// Numerical derivative in coordinate 0.
fn score_fd<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], h: f64) -> Option<f64> {
    let (a, b) = offsets(l, x, 0, h)?;
    if a == -b {
        Some((shifted(l, x, &[(0, a)]) - shifted(l, x, &[(0, b)])) / (2.0 * h))
    } else {
        // three-point one-sided stencil
        let d = b;
        Some((-3.0 * l(x) + 4.0 * shifted(l, x, &[(0, d)]) - shifted(l, x, &[(0, 2.0 * d)])) / (2.0 * d))
    }
}

fn hessian_fd<F: Fn(&[f64]) -> f64>(l: &F, x: &[f64], steps: &[f64]) -> Option<DMatrix<f64>> {
    let k = x.len();
    let offs: Vec<(f64, f64)> = (0..k)
        .map(|i| offsets(l, x, i, steps[i]))
        .collect::<Option<Vec<_>>>()?;
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        let (a, b) = offs[i];
        h[(i, i)] = second_diff(l, x, i, steps[i])?;
        for j in 0..i {
            let (c, d) = offs[j];
            let v = (shifted(l, x, &[(i, a), (j, c)])
                - shifted(l, x, &[(i, a), (j, d)])
                - shifted(l, x, &[(i, b), (j, c)])
                + shifted(l, x, &[(i, b), (j, d)]))
                / ((a - b) * (c - d));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    if h.iter().all(|v| v.is_finite()) {
        Some(h)
    } else {
        None
    }
}

/// Score in η and efficient observed information at (η0, null MLE) for
/// every grid point. Entries that cannot be evaluated are NaN.
pub fn score_and_information<M: SubTestModel + ?Sized>(
    model: &M,
    data: &M::Data,
    grid: &ScanGrid,
    null: &NullFit,
) -> Vec<(f64, f64)> {
    let eta0 = model.eta_null();
    let mut x0 = vec![eta0];
    x0.extend_from_slice(&null.nuisance);
    let bad = (f64::NAN, f64::NAN);
    grid.points()
        .iter()
        .map(|&at| {
            let l = |x: &[f64]| model.loglik(data, at, x[0], &x[1..]);
            let Some(steps) = (0..x0.len()).map(|i| settle_step(&l, &x0, i)).collect::<Option<Vec<_>>>()
            else {
                return bad;
            };
            let Some(score) = score_fd(&l, &x0, steps[0]) else {
                return bad;
            };
            let Some(h) = hessian_fd(&l, &x0, &steps) else {
                return bad;
            };
            let info = -h;
            let k = x0.len();
            let eff = if k == 1 {
                info[(0, 0)]
            } else {
                let i_nn = info.view((1, 1), (k - 1, k - 1)).into_owned();
                let i_en: DVector<f64> = info.view((1, 0), (k - 1, 1)).column(0).into_owned();
                match i_nn.lu().solve(&i_en) {
                    Some(sol) => info[(0, 0)] - i_en.dot(&sol),
                    None => f64::NAN,
                }
            };
            (score, eff)
        })
        .collect()
}

/// Score divided by the root of the efficient observed information.
/// Entries whose information is not positive are NaN.
pub fn score_sequence<M: SubTestModel + ?Sized>(
    model: &M,
    data: &M::Data,
    grid: &ScanGrid,
    null: &NullFit,
) -> Vec<f64> {
    score_and_information(model, data, grid, null)
        .into_iter()
        .map(|(score, eff)| {
            if eff > 0.0 && eff.is_finite() && score.is_finite() {
                score / eff.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Across-replicate correlation of score sequences, with pairwise deletion
/// of invalid entries. Dividing by the sample standard deviation plays the
/// role of the expected information.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCovariance {
    pub grid: ScanGrid,
    /// Unit-diagonal correlation estimate; NaN where fewer than two pairs.
    pub cov: DMatrix<f64>,
    /// Sample variance of the unscaled input at each grid point.
    pub variances: DVector<f64>,
    /// Replicates contributing to each entry.
    pub counts: DMatrix<usize>,
}

impl ScoreCovariance {
    pub fn from_samples(grid: &ScanGrid, samples: &[Vec<f64>]) -> Result<Self> {
        let r = grid.resolution();
        if samples.iter().any(|s| s.len() != r) {
            return Err(TohmError::invalid("score sample length differs from grid resolution"));
        }
        let mut cov = DMatrix::from_element(r, r, f64::NAN);
        let mut variances = DVector::from_element(r, f64::NAN);
        let mut counts = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..=i {
                let pairs: Vec<(f64, f64)> = samples
                    .iter()
                    .map(|s| (s[i], s[j]))
                    .filter(|(a, b)| a.is_finite() && b.is_finite())
                    .collect();
                let n = pairs.len();
                counts[(i, j)] = n;
                counts[(j, i)] = n;
                if n < 2 {
                    continue;
                }
                let nf = n as f64;
                let ma = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
                let mb = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
                let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
                for &(a, b) in &pairs {
                    sab += (a - ma) * (b - mb);
                    saa += (a - ma) * (a - ma);
                    sbb += (b - mb) * (b - mb);
                }
                if i == j {
                    variances[i] = saa / (nf - 1.0);
                    cov[(i, i)] = if saa > 0.0 { 1.0 } else { f64::NAN };
                    continue;
                }
                let rho = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
                let rho = if rho.is_finite() { rho } else { f64::NAN };
                cov[(i, j)] = rho;
                cov[(j, i)] = rho;
            }
        }
        Ok(ScoreCovariance {
            grid: grid.clone(),
            cov,
            variances,
            counts,
        })
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)]
    }
}

/// Score sequences of `n_replicates` null replicates.
pub fn score_covariance(
    null: &dyn NullSource,
    grid: &ScanGrid,
    settings: &EnsembleSettings,
) -> Result<ScoreCovariance> {
    if settings.n_replicates < 2 {
        return Err(TohmError::invalid("need at least two replicates"));
    }
    let bound = null.bind(grid)?;
    let results = map_replicates(settings.n_replicates, settings.execution, |r| {
        let seed = replicate_seed(settings.master_seed, r as u64);
        (seed, bound.score(settings.n_obs, seed))
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(s) => samples.push(s),
            Err(_) => failed.push(seed),
        }
    }
    if failed.len() as f64 > crate::montecarlo::MAX_FAILURE_FRACTION * settings.n_replicates as f64 {
        return Err(TohmError::EnsembleFailure {
            failed: failed.len(),
            total: settings.n_replicates,
            seeds: failed,
        });
    }
    ScoreCovariance::from_samples(grid, &samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BermanRow {
    pub tau: f64,
    pub value: f64,
}

impl BermanRow {
    pub const HEADER: [&'static str; 2] = ["tau", "value"];
}

/// Ladder of separations from 1.5 up to the grid width.
pub fn default_tau_ladder(grid: &ScanGrid) -> Vec<f64> {
    let width = grid.upper() - grid.lower();
    if width <= 1.5 {
        return Vec::new();
    }
    let n = 40;
    (0..n)
        .map(|k| 1.5 + (width - 1.5) * k as f64 / (n - 1) as f64)
        .collect()
}

/// sup over pairs more than τ apart of |ρ̂|·ln τ, for each τ having such a pair.
pub fn berman_curve(cov: &ScoreCovariance, taus: &[f64]) -> Vec<BermanRow> {
    let p = cov.grid.points();
    let r = p.len();
    taus.iter()
        .filter_map(|&tau| {
            let mut best: Option<f64> = None;
            for i in 0..r {
                for j in 0..i {
                    if (p[i] - p[j]).abs() <= tau {
                        continue;
                    }
                    let rho = cov.correlation(i, j);
                    if !rho.is_finite() {
                        continue;
                    }
                    let v = rho.abs() * tau.ln();
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            best.map(|value| BermanRow { tau, value })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub c: f64,
    pub sigma: f64,
    #[serde(rename = "R")]
    pub resolution: usize,
    /// Bonferroni over the upcrossing bound; +∞ when the bound is zero.
    pub ratio: f64,
}

impl RatioRow {
    pub const HEADER: [&'static str; 4] = ["c", "sigma", "R", "ratio"];
}

/// Bonferroni / upcrossing-bound ratio across resolutions and thresholds,
/// each resolution calibrated by its own null ensemble at `c0`.
pub fn ratio_curve(
    null: &dyn NullSource,
    resolutions: &[usize],
    cs: &[f64],
    c0: f64,
    settings: &EnsembleSettings,
) -> Result<Vec<RatioRow>> {
    let family = null.family();
    let (lo, hi) = null.range();
    let mut rows = Vec::new();
    for &r in resolutions {
        let grid = ScanGrid::equally_spaced(lo, hi, r)?;
        let bound = null.bind(&grid)?;
        let e = estimate_upcrossings(bound.as_ref(), c0, settings, false)?;
        for &c in cs.iter().filter(|&&c| c >= c0) {
            rows.push(ratio_row(family, r, c, c0, e.e_upcrossings)?);
        }
    }
    Ok(rows)
}

pub(crate) fn ratio_row(
    family: ProcessFamily,
    r: usize,
    c: f64,
    c0: f64,
    e_upcrossings: f64,
) -> Result<RatioRow> {
    let tohm = tohm_bound(family, c, c0, e_upcrossings, 0.0)?.pvalue;
    let bonf = r as f64 * local_pvalue(family, c);
    let ratio = if tohm > 0.0 { bonf / tohm } else { f64::INFINITY };
    Ok(RatioRow {
        c,
        sigma: p_to_sigma(tohm.max(f64::MIN_POSITIVE))?,
        resolution: r,
        ratio,
    })
}

//! Pieces shared by the two-component mixture models.

use crate::error::{Result, TohmError};
use crate::numerics::optimize::{maximize_bounded, OptimizerSettings};

/// Unbinned event energies with cached logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct Events {
    y: Vec<f64>,
    ln_y: Vec<f64>,
    sum_ln_y: f64,
    sum_y: f64,
}

impl Events {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(TohmError::invalid("dataset is empty"));
        }
        if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(TohmError::invalid(format!("observation {v} is not a positive real")));
        }
        let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let sum_ln_y = ln_y.iter().sum();
        let sum_y = y.iter().sum();
        Ok(Events {
            y,
            ln_y,
            sum_ln_y,
            sum_y,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub(crate) fn ln_values(&self) -> &[f64] {
        &self.ln_y
    }

    pub(crate) fn sum_ln(&self) -> f64 {
        self.sum_ln_y
    }

    pub(crate) fn sum(&self) -> f64 {
        self.sum_y
    }
}

/// ln of the truncated Pareto density φ y^{-(φ+1)} / (1 - U^{-φ}) on [1, U].
pub(crate) fn pareto_ln_norm(phi: f64, upper: f64) -> f64 {
    phi.ln() - (-(-phi * upper.ln()).exp_m1()).ln()
}

#[cfg(test)]
pub(crate) fn pareto_cdf(y: f64, phi: f64, upper: f64) -> f64 {
    if y <= 1.0 {
        return 0.0;
    }
    if y >= upper {
        return 1.0;
    }
    (-phi * y.ln()).exp_m1() / (-phi * upper.ln()).exp_m1()
}

/// Inverse CDF of the truncated Pareto law.
pub(crate) fn pareto_quantile(u: f64, phi: f64, upper: f64) -> f64 {
    let tail = -(-phi * upper.ln()).exp_m1();
    let y = (-(-u * tail).ln_1p() / phi).exp();
    y.clamp(1.0, upper)
}

/// Null log-likelihood of truncated Pareto data from the sufficient statistic
/// Σ ln y.
pub(crate) fn pareto_loglik(phi: f64, n: f64, sum_ln_y: f64, upper: f64) -> f64 {
    n * pareto_ln_norm(phi, upper) - (phi + 1.0) * sum_ln_y
}

pub(crate) fn fill_pareto(out: &mut [f64], ln_y: &[f64], phi: f64, upper: f64) {
    let c = pareto_ln_norm(phi, upper);
    for (o, &l) in out.iter_mut().zip(ln_y) {
        *o = (c - (phi + 1.0) * l).exp();
    }
}

/// Box for the power-law index.
pub(crate) const PHI_BOX: (f64, f64) = (0.01, 10.0);

pub(crate) fn fit_pareto(n: f64, sum_ln_y: f64, upper: f64) -> Result<(f64, f64)> {
    // concave in φ: one Brent run suffices
    let settings = OptimizerSettings {
        restarts: 0,
        ..Default::default()
    };
    let m = maximize_bounded(
        |x| pareto_loglik(x[0], n, sum_ln_y, upper),
        &[PHI_BOX],
        None,
        &settings,
    )?;
    Ok((m.argmax[0], m.value))
}

/// max over η ∈ [0, 1] of Σ ln((1 - η) f_i + η g_i); returns (η̂, value).
///
/// The objective is concave in η, so the sign of its derivative at the
/// ends decides boundary solutions and the interior root is bracketed.
pub(crate) fn best_eta(f: &[f64], g: &[f64]) -> (f64, f64) {
    let deriv = |eta: f64| -> (f64, f64) {
        let mut d = 0.0;
        let mut d2 = 0.0;
        for (&fi, &gi) in f.iter().zip(g) {
            let m = (1.0 - eta) * fi + eta * gi;
            if m <= 0.0 {
                return (f64::NEG_INFINITY, f64::NEG_INFINITY);
            }
            let r = (gi - fi) / m;
            d += r;
            d2 -= r * r;
        }
        (d, d2)
    };
    let value = |eta: f64| -> f64 {
        f.iter()
            .zip(g)
            .map(|(&fi, &gi)| ((1.0 - eta) * fi + eta * gi).ln())
            .sum()
    };
    let (d0, _) = deriv(0.0);
    if !(d0 > 0.0) {
        return (0.0, value(0.0));
    }
    let (d1, _) = deriv(1.0);
    if d1 >= 0.0 {
        return (1.0, value(1.0));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut eta = 0.5;
    for _ in 0..200 {
        let (d, d2) = deriv(eta);
        if d > 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
        let newton = if d2 < 0.0 && d.is_finite() { eta - d / d2 } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - eta).abs() < 1e-13 || hi - lo < 1e-13;
        eta = next;
        if done {
            break;
        }
    }
    (eta, value(eta))
}

/// Maximizes `profile(x)` over `bounds`, starting near `warm` when given.
/// Maximizes a 1-D profile from `start`. If the objective at `fallback`
/// (the null estimate) beats the result, the search is repeated from
/// there, so the profile never drops below the null fit.
pub(crate) fn outer_max<F: FnMut(f64) -> f64>(
    mut profile: F,
    bounds: (f64, f64),
    start: f64,
    fallback: f64,
    at: f64,
) -> Result<(f64, f64)> {
    let settings = OptimizerSettings::default();
    let run = |from: f64, profile: &mut F| {
        maximize_bounded(|x| profile(x[0]), &[bounds], Some(&[from.clamp(bounds.0, bounds.1)]), &settings)
            .map_err(|e| TohmError::FitFailure {
                theta: at,
                reason: e.to_string(),
            })
    };
    let mut best = run(start, &mut profile)?;
    if start != fallback {
        let fb = fallback.clamp(bounds.0, bounds.1);
        let v = profile(fb);
        if v > best.value {
            let again = run(fb, &mut profile)?;
            best = if again.value >= v {
                again
            } else {
                crate::numerics::Maximum {
                    argmax: vec![fb],
                    value: v,
                    evaluations: again.evaluations + 1,
                }
            };
        }
    }
    if !best.value.is_finite() {
        return Err(TohmError::FitFailure {
            theta: at,
            reason: "log-likelihood is not finite at the optimum".into(),
        });
    }
    Ok((best.argmax[0], best.value))
}

pub(crate) fn check_in_support(ys: &[f64], lo: f64, hi: f64) -> Result<()> {
    if ys.is_empty() {
        return Err(TohmError::invalid("dataset is empty"));
    }
    if let Some(y) = ys.iter().find(|&&y| !(y >= lo && y <= hi)) {
        return Err(TohmError::invalid(format!(
            "observation {y} outside the support [{lo}, {hi}]"
        )));
    }
    Ok(())
}

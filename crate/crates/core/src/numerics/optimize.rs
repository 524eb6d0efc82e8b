//! Derivative-free maximization on boxes.
//!
//! One-dimensional problems use Brent's golden-section/parabolic search;
//! higher dimensions use a Nelder–Mead simplex whose trial points are
//! projected back onto the box.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TohmError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Target accuracy on each coordinate of the maximizer.
    pub abs_tol: f64,
    /// Iteration cap for a single Brent or simplex run.
    pub max_iters: usize,
    /// Extra starts: sub-interval starts in 1-D, simplex rebuilds in n-D.
    pub restarts: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            abs_tol: 1e-8,
            max_iters: 500,
            restarts: 3,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(TohmError::invalid("optimizer abs_tol must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(TohmError::invalid("optimizer max_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Non-finite objective values rank below every finite one.
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `f` over the box `bounds`.
///
/// `start` seeds the search: in 1-D a bracket is grown around it, in n-D it
/// is the first simplex vertex. Without a start, 1-D searches split the box
/// into `restarts + 1` cells and keep the best local maximum.
pub fn maximize_bounded<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    start: Option<&[f64]>,
    settings: &OptimizerSettings,
) -> Result<Maximum> {
    settings.validate()?;
    if bounds.is_empty() {
        return Err(TohmError::invalid("empty box"));
    }
    for &(lo, hi) in bounds {
        if !(lo < hi) {
            return Err(TohmError::invalid(format!("degenerate box side [{lo}, {hi}]")));
        }
    }
    if let Some(s) = start {
        if s.len() != bounds.len() {
            return Err(TohmError::invalid("start point has wrong dimension"));
        }
    }
    if bounds.len() == 1 {
        let (lo, hi) = bounds[0];
        let mut g = |x: f64| sanitize(f(&[x]));
        let (x, v, evals) = match start {
            Some(s) => bracketed_max(&mut g, lo, hi, s[0].clamp(lo, hi), settings)?,
            None => multistart_max(&mut g, lo, hi, settings)?,
        };
        return Ok(Maximum {
            argmax: vec![x],
            value: v,
            evaluations: evals,
        });
    }
    nelder_mead_max(&mut f, bounds, start, settings)
}

/// Brent's method on [a, b]; returns (x, f(x), evaluations).
pub fn brent_max<G: FnMut(f64) -> f64>(
    g: &mut G,
    mut a: f64,
    mut b: f64,
    abs_tol: f64,
    max_iters: usize,
) -> Result<(f64, f64, usize)> {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    const SQRT_EPS: f64 = 1.5e-8;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    // minimize the negation
    let mut fx = -g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    let mut evals = 1;
    for _ in 0..max_iters {
        let m = 0.5 * (a + b);
        let tol1 = SQRT_EPS * x.abs() + abs_tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, -fx, evals));
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = -g(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Err(TohmError::NonConvergence {
        best: vec![x],
        value: -fx,
        iterations: max_iters,
    })
}

fn with_endpoints<G: FnMut(f64) -> f64>(
    g: &mut G,
    lo: f64,
    hi: f64,
    best: (f64, f64, usize),
) -> (f64, f64, usize) {
    let (mut x, mut v, mut n) = best;
    for edge in [lo, hi] {
        let fe = g(edge);
        n += 1;
        if fe > v {
            x = edge;
            v = fe;
        }
    }
    (x, v, n)
}

fn multistart_max<G: FnMut(f64) -> f64>(
    g: &mut G,
    lo: f64,
    hi: f64,
    settings: &OptimizerSettings,
) -> Result<(f64, f64, usize)> {
    let cells = settings.restarts + 1;
    let width = (hi - lo) / cells as f64;
    let mut best: Option<(f64, f64, usize)> = None;
    let mut evals = 0;
    for k in 0..cells {
        let a = lo + k as f64 * width;
        let b = if k + 1 == cells { hi } else { a + width };
        let r = brent_max(g, a, b, settings.abs_tol, settings.max_iters)?;
        evals += r.2;
        if best.is_none_or(|bst| r.1 > bst.1) {
            best = Some(r);
        }
    }
    let (x, v, _) = best.expect("at least one cell");
    Ok(with_endpoints(g, lo, hi, (x, v, evals)))
}

/// Brent inside a bracket around `start`, widened while the optimum sits
/// on an interior bracket edge.
fn bracketed_max<G: FnMut(f64) -> f64>(
    g: &mut G,
    lo: f64,
    hi: f64,
    start: f64,
    settings: &OptimizerSettings,
) -> Result<(f64, f64, usize)> {
    let mut half = (0.02 * (hi - lo)).max(10.0 * settings.abs_tol);
    let mut centre = start;
    let mut evals = 0;
    loop {
        let a = (centre - half).max(lo);
        let b = (centre + half).min(hi);
        let (x, v, n) = brent_max(g, a, b, settings.abs_tol, settings.max_iters)?;
        evals += n;
        let edge_tol = 4.0 * (1.5e-8 * x.abs() + settings.abs_tol);
        let stuck_low = a > lo && x - a < edge_tol;
        let stuck_high = b < hi && b - x < edge_tol;
        if !(stuck_low || stuck_high) || (a <= lo && b >= hi) {
            return Ok(with_endpoints(g, lo, hi, (x, v, evals)));
        }
        centre = x;
        half *= 4.0;
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

fn initial_step(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let step = if width.is_finite() {
        0.1 * width
    } else {
        0.1 * x.abs().max(1.0)
    };
    // point the step into the box
    if x + step > hi {
        -step
    } else {
        step
    }
}

fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &[(f64, f64)],
    start: Option<&[f64]>,
    settings: &OptimizerSettings,
) -> Result<Maximum> {
    let dim = bounds.len();
    let mut origin: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => bounds
            .iter()
            .map(|&(lo, hi)| match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => 0.0,
            })
            .collect(),
    };
    project(&mut origin, bounds);
    let mut neg = |x: &[f64]| -sanitize(f(x));
    let mut evals = 0;

    let mut best_x = origin.clone();
    let mut best_v = neg(&best_x);
    evals += 1;
    let mut scale: Vec<f64> = (0..dim)
        .map(|i| initial_step(origin[i], bounds[i].0, bounds[i].1))
        .collect();

    for round in 0..=settings.restarts {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((best_x.clone(), best_v));
        for i in 0..dim {
            let mut p = best_x.clone();
            p[i] += scale[i];
            project(&mut p, bounds);
            if p[i] == best_x[i] {
                p[i] -= scale[i];
                project(&mut p, bounds);
            }
            let v = neg(&p);
            evals += 1;
            simplex.push((p, v));
        }
        let mut converged = false;
        for _ in 0..settings.max_iters {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = (1..=dim)
                .flat_map(|k| (0..dim).map(move |i| (k, i)))
                .map(|(k, i)| (simplex[k].0[i] - simplex[0].0[i]).abs())
                .fold(0.0_f64, f64::max);
            if spread < settings.abs_tol {
                converged = true;
                break;
            }
            let mut centroid = vec![0.0; dim];
            for (p, _) in &simplex[..dim] {
                for i in 0..dim {
                    centroid[i] += p[i] / dim as f64;
                }
            }
            let worst = simplex[dim].clone();
            let along = |t: f64| -> Vec<f64> {
                let mut q: Vec<f64> = (0..dim)
                    .map(|i| centroid[i] + t * (worst.0[i] - centroid[i]))
                    .collect();
                project(&mut q, bounds);
                q
            };
            let xr = along(-1.0);
            let fr = neg(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = neg(&xe);
                evals += 1;
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let xc = along(-0.5);
                    let fc = neg(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = neg(&xc);
                    (xc, fc)
                };
                evals += 1;
                if fc < worst.1.min(fr) {
                    simplex[dim] = (xc, fc);
                } else {
                    // shrink towards the best vertex
                    let b = simplex[0].0.clone();
                    for (p, v) in simplex.iter_mut().skip(1) {
                        for i in 0..dim {
                            p[i] = b[i] + 0.5 * (p[i] - b[i]);
                        }
                        *v = neg(p);
                        evals += 1;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if !converged {
            return Err(TohmError::NonConvergence {
                best: simplex[0].0.clone(),
                value: -simplex[0].1,
                iterations: settings.max_iters,
            });
        }
        let improved = best_v - simplex[0].1 > 1e-12 * (1.0 + best_v.abs());
        best_x = simplex[0].0.clone();
        best_v = simplex[0].1;
        if round > 0 && !improved {
            break;
        }
        // rebuild a smaller simplex around the incumbent
        for s in scale.iter_mut() {
            *s *= 0.25;
        }
    }
    Ok(Maximum {
        argmax: best_x,
        value: -best_v,
        evaluations: evals,
    })
}

//! Evaluation grids and sequences of sub-test statistics on them.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TohmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    lower: f64,
    upper: f64,
    points: Vec<f64>,
}

impl ScanGrid {
    /// `resolution` equally spaced points from `lower` to `upper` inclusive.
    pub fn equally_spaced(lower: f64, upper: f64, resolution: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(TohmError::invalid(format!(
                "grid range must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if resolution < 2 {
            return Err(TohmError::invalid("grid resolution must be >= 2"));
        }
        let step = (upper - lower) / (resolution - 1) as f64;
        let mut points: Vec<f64> = (0..resolution).map(|i| lower + i as f64 * step).collect();
        points[resolution - 1] = upper;
        Ok(ScanGrid {
            lower,
            upper,
            points,
        })
    }

    /// Arbitrary strictly increasing points.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(TohmError::invalid("grid needs at least two points"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(TohmError::invalid("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TohmError::invalid("grid points must be strictly increasing"));
        }
        Ok(ScanGrid {
            lower: points[0],
            upper: points[points.len() - 1],
            points,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn resolution(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Spacing of an equally spaced grid (mean spacing otherwise).
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.points.len() - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTrace {
    grid: ScanGrid,
    values: Vec<f64>,
}

impl ProcessTrace {
    pub fn new(grid: ScanGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.resolution() {
            return Err(TohmError::invalid(format!(
                "trace has {} values for a grid of {} points",
                values.len(),
                grid.resolution()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TohmError::invalid(format!(
                "non-finite statistic at theta = {}",
                grid.points()[i]
            )));
        }
        Ok(ProcessTrace { grid, values })
    }

    pub fn grid(&self) -> &ScanGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pointwise transform, e.g. absolute values of a signed trace.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ProcessTrace::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }
}

fn check_threshold(c: f64) -> Result<()> {
    if c.is_finite() {
        Ok(())
    } else {
        Err(TohmError::invalid(format!("threshold must be finite, got {c}")))
    }
}

/// Counts of upward transitions across `c` between neighbouring grid points.
/// A value equal to `c` counts as below.
pub fn count_upcrossings(trace: &ProcessTrace, c: f64) -> Result<usize> {
    check_threshold(c)?;
    Ok(upcrossings_unchecked(trace.values(), c))
}

pub fn count_exceedances(trace: &ProcessTrace, c: f64) -> Result<usize> {
    check_threshold(c)?;
    Ok(exceedances_unchecked(trace.values(), c))
}

pub(crate) fn upcrossings_unchecked(values: &[f64], c: f64) -> usize {
    values.windows(2).filter(|w| w[0] <= c && w[1] > c).count()
}

pub(crate) fn exceedances_unchecked(values: &[f64], c: f64) -> usize {
    values.iter().filter(|&&v| v > c).count()
}

/// The maximum and where it occurs; ties go to the smallest grid point.
pub fn global_max(trace: &ProcessTrace) -> (f64, f64) {
    let (i, v) = argmax_first(trace.values());
    (v, trace.grid().points()[i])
}

/// Maximum of |values| and where it occurs.
pub fn global_abs_max(trace: &ProcessTrace) -> (f64, f64) {
    let abs: Vec<f64> = trace.values().iter().map(|v| v.abs()).collect();
    let (i, v) = argmax_first(&abs);
    (v, trace.grid().points()[i])
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(vals: &[f64]) -> ProcessTrace {
        let g = ScanGrid::equally_spaced(0.0, 1.0, vals.len()).unwrap();
        ProcessTrace::new(g, vals.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted() {
        let t = trace(&[0.5, 2.0, 1.0, 3.0, 0.2]);
        assert_eq!(count_upcrossings(&t, 1.5).unwrap(), 2);
        assert_eq!(count_exceedances(&t, 1.5).unwrap(), 2);
        assert_eq!(count_upcrossings(&t, f64::MAX).unwrap(), 0);
        assert_eq!(count_exceedances(&t, -1.0).unwrap(), 5);
        assert!(count_upcrossings(&t, f64::NAN).is_err());
        assert!(count_exceedances(&t, f64::INFINITY).is_err());
    }

    #[test]
    fn value_at_threshold_is_below() {
        let t = trace(&[1.0, 1.5, 1.5, 2.0]);
        assert_eq!(count_upcrossings(&t, 1.5).unwrap(), 1);
        assert_eq!(count_exceedances(&t, 1.5).unwrap(), 1);
    }

    #[test]
    fn max_and_ties() {
        let g = ScanGrid::from_points(vec![10.0, 20.0, 30.0]).unwrap();
        let t = ProcessTrace::new(g.clone(), vec![1.0, 5.0, 3.0]).unwrap();
        assert_eq!(global_max(&t), (5.0, 20.0));
        let flat = ProcessTrace::new(g, vec![2.0; 3]).unwrap();
        assert_eq!(global_max(&flat), (2.0, 10.0));
        let signed = trace(&[1.0, -4.0, 3.0]);
        assert_eq!(global_abs_max(&signed), (4.0, 0.5));
    }

    #[test]
    fn grid_validation() {
        assert!(ScanGrid::equally_spaced(1.0, 1.0, 5).is_err());
        assert!(ScanGrid::equally_spaced(0.0, 1.0, 1).is_err());
        assert!(ScanGrid::from_points(vec![0.0, 0.0, 1.0]).is_err());
        let g = ScanGrid::equally_spaced(20.0, 44.0, 50).unwrap();
        assert_eq!(g.points()[0], 20.0);
        assert_eq!(g.points()[49], 44.0);
        assert!(ProcessTrace::new(g.clone(), vec![0.0; 49]).is_err());
        let mut v = vec![0.0; 50];
        v[3] = f64::NAN;
        assert!(ProcessTrace::new(g, v).is_err());
    }

    fn brute_up(v: &[f64], c: f64) -> usize {
        let mut n = 0;
        for r in 1..v.len() {
            if !(v[r - 1] > c) && v[r] > c {
                n += 1;
            }
        }
        n
    }

    proptest! {
        #[test]
        fn counting_invariants(vals in prop::collection::vec(-5.0f64..5.0, 2..60), c in -6.0f64..6.0) {
            let t = trace(&vals);
            let up = count_upcrossings(&t, c).unwrap();
            let ex = count_exceedances(&t, c).unwrap();
            prop_assert!(up <= ex && ex <= vals.len());
            prop_assert_eq!(up, brute_up(&vals, c));
            let (m, _) = global_max(&t);
            prop_assert_eq!(m > c, ex >= 1);
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            if c >= m || c < min {
                prop_assert_eq!(up, 0);
            }
        }

        #[test]
        fn exceedances_monotone(vals in prop::collection::vec(-5.0f64..5.0, 2..60), c1 in -6.0f64..6.0, dc in 0.0f64..3.0) {
            let t = trace(&vals);
            prop_assert!(count_exceedances(&t, c1 + dc).unwrap() <= count_exceedances(&t, c1).unwrap());
        }

        #[test]
        fn nested_grid_max_dominates(vals in prop::collection::vec(-5.0f64..5.0, 3..40)) {
            // every other point of a fine trace is the coarse trace
            let fine = trace(&vals);
            let coarse: Vec<f64> = vals.iter().step_by(2).cloned().collect();
            if coarse.len() >= 2 {
                prop_assert!(global_max(&fine).0 >= global_max(&trace(&coarse)).0);
            }
        }
    }
}

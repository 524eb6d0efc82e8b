//! Grouped binomial regression whose logit changes slope at an unknown age θ:
//! logit π = φ1 + φ2·x + ξ·(x − θ)·1{x ≥ θ}.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{check_positive_n, NullFit, ProfileFit, SubTestModel, TestDirection};
use crate::bound::ProcessFamily;
use crate::error::{Result, TohmError};

/// Rows of (covariate, successes, trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedBinomial {
    pub x: Vec<f64>,
    pub cases: Vec<u64>,
    pub trials: Vec<u64>,
}

impl GroupedBinomial {
    pub fn new(x: Vec<f64>, cases: Vec<u64>, trials: Vec<u64>) -> Result<Self> {
        let d = GroupedBinomial { x, cases, trials };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(TohmError::invalid("dataset is empty"));
        }
        if self.x.len() != self.cases.len() || self.x.len() != self.trials.len() {
            return Err(TohmError::invalid("x, cases and trials differ in length"));
        }
        for i in 0..self.x.len() {
            if !self.x[i].is_finite() {
                return Err(TohmError::invalid(format!("row {}: x is not finite", i + 1)));
            }
            if self.trials[i] == 0 {
                return Err(TohmError::invalid(format!("row {}: trials must be >= 1", i + 1)));
            }
            if self.cases[i] > self.trials[i] {
                return Err(TohmError::invalid(format!(
                    "row {}: cases {} exceed trials {}",
                    i + 1,
                    self.cases[i],
                    self.trials[i]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointModel {
    /// Design points used when simulating.
    pub design_x: Vec<f64>,
    /// Relative share of trials at each design point.
    pub design_weights: Vec<f64>,
    pub range: (f64, f64),
}

impl Default for BreakpointModel {
    fn default() -> Self {
        let x: Vec<f64> = (17..=47).map(f64::from).collect();
        let w = vec![1.0; x.len()];
        BreakpointModel {
            design_x: x,
            design_weights: w,
            range: (20.0, 44.0),
        }
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl BreakpointModel {
    /// Model simulating on the design of an observed dataset.
    pub fn for_design(data: &GroupedBinomial, range: (f64, f64)) -> Result<Self> {
        data.validate()?;
        let m = BreakpointModel {
            design_x: data.x.clone(),
            design_weights: data.trials.iter().map(|&t| t as f64).collect(),
            range,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.design_x.is_empty() || self.design_x.len() != self.design_weights.len() {
            return Err(TohmError::invalid("design x and weights must be non-empty and equal length"));
        }
        if self.design_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.design_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(TohmError::invalid("design weights must be >= 0 with a positive sum"));
        }
        let (lo, hi) = self.range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(TohmError::invalid(format!("bad break range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Splits `n` trials over the design points in proportion to the weights
    /// (largest remainder, ties to the earlier row).
    pub fn allocate(&self, n: u64) -> Vec<u64> {
        let total: f64 = self.design_weights.iter().sum();
        let exact: Vec<f64> = self
            .design_weights
            .iter()
            .map(|w| n as f64 * w / total)
            .collect();
        let mut alloc: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
        let assigned: u64 = alloc.iter().sum();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
            alloc[i] += 1;
        }
        alloc
    }

    pub fn linear_predictor(x: f64, phi1: f64, phi2: f64, xi: f64, theta: f64) -> f64 {
        phi1 + phi2 * x + if x >= theta { xi * (x - theta) } else { 0.0 }
    }

    /// Binomial draws at the design points with `n` trials in total.
    pub fn simulate(
        &self,
        phi1: f64,
        phi2: f64,
        xi: f64,
        theta: f64,
        n: u64,
        seed: u64,
    ) -> Result<GroupedBinomial> {
        self.validate()?;
        check_positive_n(n as usize)?;
        if ![phi1, phi2, xi, theta].iter().all(|v| v.is_finite()) {
            return Err(TohmError::invalid("breakpoint parameters must be finite"));
        }
        let trials = self.allocate(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut cases = Vec::new();
        let mut kept = Vec::new();
        for (i, &t) in trials.iter().enumerate() {
            if t == 0 {
                continue;
            }
            let p = logistic(Self::linear_predictor(self.design_x[i], phi1, phi2, xi, theta));
            let dist = Binomial::new(t, p)
                .map_err(|e| TohmError::invalid(format!("binomial draw: {e}")))?;
            x.push(self.design_x[i]);
            cases.push(dist.sample(&mut rng));
            kept.push(t);
        }
        GroupedBinomial::new(x, cases, kept)
    }

    fn design_row(x: f64, theta: Option<f64>) -> Vec<f64> {
        match theta {
            Some(t) => vec![1.0, x, if x >= t { x - t } else { 0.0 }],
            None => vec![1.0, x],
        }
    }

    fn loglik_beta(data: &GroupedBinomial, theta: Option<f64>, beta: &[f64]) -> f64 {
        (0..data.len())
            .map(|i| {
                let row = Self::design_row(data.x[i], theta);
                let t: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                data.cases[i] as f64 * t - data.trials[i] as f64 * softplus(t)
            })
            .sum()
    }

    /// Newton–Raphson on the concave log-likelihood with step halving.
    fn newton(
        data: &GroupedBinomial,
        theta: Option<f64>,
        start: Vec<f64>,
        at: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let k = start.len();
        let mut beta = start;
        let mut ll = Self::loglik_beta(data, theta, &beta);
        if !ll.is_finite() {
            return Err(TohmError::FitFailure {
                theta: at,
                reason: "log-likelihood not finite at the start".into(),
            });
        }
        for _ in 0..200 {
            let mut grad = DVector::<f64>::zeros(k);
            let mut info = DMatrix::<f64>::zeros(k, k);
            for i in 0..data.len() {
                let row = Self::design_row(data.x[i], theta);
                let t: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = logistic(t);
                let n = data.trials[i] as f64;
                let resid = data.cases[i] as f64 - n * p;
                let w = n * p * (1.0 - p);
                for a in 0..k {
                    grad[a] += row[a] * resid;
                    for b in 0..k {
                        info[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
            let step = match info.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => info.lu().solve(&grad).ok_or_else(|| TohmError::FitFailure {
                    theta: at,
                    reason: "singular information matrix".into(),
                })?,
            };
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
                let tl = Self::loglik_beta(data, theta, &trial);
                if tl.is_finite() && tl >= ll - 1e-12 * ll.abs() {
                    let small = step
                        .iter()
                        .zip(&beta)
                        .all(|(s, b)| (scale * s).abs() <= 1e-10 * (1.0 + b.abs()));
                    beta = trial;
                    let gain = tl - ll;
                    ll = tl;
                    accepted = true;
                    if small || (gain.abs() <= 1e-13 * (1.0 + ll.abs()) && scale == 1.0) {
                        return Ok((beta, ll));
                    }
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                // no ascent possible along the Newton direction: at the optimum to rounding
                return Ok((beta, ll));
            }
        }
        Err(TohmError::FitFailure {
            theta: at,
            reason: "Newton iterations did not converge".into(),
        })
    }
}

impl SubTestModel for BreakpointModel {
    type Data = GroupedBinomial;

    fn family(&self) -> ProcessFamily {
        ProcessFamily::GaussianTwoSided
    }

    fn direction(&self) -> TestDirection {
        TestDirection::TwoSided
    }

    fn search_range(&self) -> (f64, f64) {
        self.range
    }

    fn nuisance_names(&self) -> Vec<&'static str> {
        vec!["phi1", "phi2"]
    }

    fn simulate_null(&self, nuisance: &[f64], n: usize, seed: u64) -> Result<GroupedBinomial> {
        if nuisance.len() != 2 {
            return Err(TohmError::invalid("breakpoint null needs (phi1, phi2)"));
        }
        self.simulate(nuisance[0], nuisance[1], 0.0, self.range.0, n as u64, seed)
    }

    fn fit_null(&self, data: &GroupedBinomial) -> Result<NullFit> {
        data.validate()?;
        let total_cases: u64 = data.cases.iter().sum();
        let rate = (total_cases as f64 + 0.5) / (data.total_trials() as f64 + 1.0);
        let start = vec![(rate / (1.0 - rate)).ln(), 0.0];
        let (beta, loglik) = Self::newton(data, None, start, f64::NAN)?;
        Ok(NullFit {
            nuisance: beta,
            loglik,
        })
    }

    fn fit_profile(
        &self,
        data: &GroupedBinomial,
        at: f64,
        null: &NullFit,
        warm: Option<&ProfileFit>,
    ) -> Result<ProfileFit> {
        if data.x.iter().all(|&x| x < at) {
            // break beyond the data: the slope change is not identified
            return Ok(ProfileFit {
                at,
                eta: 0.0,
                nuisance: null.nuisance.clone(),
                loglik: null.loglik,
                degenerate: true,
            });
        }
        let cold = vec![null.nuisance[0], null.nuisance[1], 0.0];
        let start = warm.map_or(cold.clone(), |w| vec![w.nuisance[0], w.nuisance[1], w.eta]);
        let (beta, loglik) = match Self::newton(data, Some(at), start, at) {
            Ok(r) => r,
            Err(_) => Self::newton(data, Some(at), cold, at)?,
        };
        Ok(ProfileFit {
            at,
            eta: beta[2],
            nuisance: vec![beta[0], beta[1]],
            loglik,
            degenerate: false,
        })
    }

    fn loglik(&self, data: &GroupedBinomial, at: f64, eta: f64, nuisance: &[f64]) -> f64 {
        Self::loglik_beta(data, Some(at), &[nuisance[0], nuisance[1], eta])
    }
}

//! Dark-matter spectrum against a power law, embedded in the mixture
//! (1 − η)·power-law + η·dark-matter.
//!
//! Detection tests η = 0 with the grid over the dark-matter mass θ.
//! Exclusion tests η = 1: θ is identified under that null, so the grid
//! runs over the power-law index φ and θ is profiled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{
    best_eta, check_in_support, fill_pareto, fit_pareto, outer_max, pareto_ln_norm,
    pareto_quantile, Events, PHI_BOX,
};
use super::{check_positive_n, NullFit, ProfileFit, SubTestModel, TestDirection};
use crate::bound::ProcessFamily;
use crate::error::{Result, TohmError};
use crate::numerics::optimize::{maximize_bounded, OptimizerSettings};
use crate::numerics::quadrature::{integrate, kronrod15};

const SPECTRAL_INDEX: f64 = 1.5;
const CUTOFF: f64 = 7.8;

fn dm_ln_kernel(y: f64, ln_y: f64, theta: f64) -> f64 {
    -SPECTRAL_INDEX * ln_y - CUTOFF * y / theta
}

/// ln ∫ y^{-1.5} exp(−7.8 y/θ) dy over [1, upper].
pub(crate) fn dm_ln_norm(theta: f64, upper: f64) -> f64 {
    // factor out the value at y = 1 so the integrand is O(1)
    let shift = -CUTOFF / theta;
    let k = integrate(
        |y: f64| (dm_ln_kernel(y, y.ln(), theta) - shift).exp(),
        1.0,
        upper,
        1e-300,
        1e-11,
    );
    k.ln() + shift
}

/// Inverse-CDF sampler for the dark-matter spectrum: the CDF is tabulated
/// on log-spaced nodes and each draw is refined inside its cell.
#[derive(Debug, Clone)]
pub struct DarkMatterSampler {
    theta: f64,
    shift: f64,
    nodes: Vec<f64>,
    cum: Vec<f64>,
}

impl DarkMatterSampler {
    const NODES: usize = 1024;

    pub fn new(theta: f64, upper: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) || !(upper > 1.0) {
            return Err(TohmError::invalid("dark-matter sampler needs theta > 0, upper > 1"));
        }
        let shift = -CUTOFF / theta;
        let step = upper.ln() / (Self::NODES - 1) as f64;
        let mut nodes: Vec<f64> = (0..Self::NODES).map(|i| (i as f64 * step).exp()).collect();
        nodes[0] = 1.0;
        nodes[Self::NODES - 1] = upper;
        let mut cum = Vec::with_capacity(Self::NODES);
        cum.push(0.0);
        let mut s = DarkMatterSampler {
            theta,
            shift,
            nodes,
            cum: Vec::new(),
        };
        let mut acc = 0.0;
        for w in s.nodes.windows(2) {
            acc += kronrod15(|y| s.kernel(y), w[0], w[1]);
            cum.push(acc);
        }
        s.cum = cum;
        Ok(s)
    }

    fn kernel(&self, y: f64) -> f64 {
        (dm_ln_kernel(y, y.ln(), self.theta) - self.shift).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let total = *self.cum.last().expect("non-empty");
        if y <= self.nodes[0] {
            return 0.0;
        }
        if y >= *self.nodes.last().expect("non-empty") {
            return 1.0;
        }
        let j = self.nodes.partition_point(|&x| x <= y) - 1;
        (self.cum[j] + kronrod15(|t| self.kernel(t), self.nodes[j], y)) / total
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.nodes[0];
        }
        let total = *self.cum.last().expect("non-empty");
        let target = u.clamp(0.0, 1.0) * total;
        let j = (self.cum.partition_point(|&c| c <= target)).clamp(1, self.nodes.len() - 1) - 1;
        let (mut lo, mut hi) = (self.nodes[j], self.nodes[j + 1]);
        let rest = target - self.cum[j];
        let mut y = lo + (hi - lo) * (rest / (self.cum[j + 1] - self.cum[j])).clamp(0.0, 1.0);
        if !y.is_finite() {
            return lo;
        }
        for _ in 0..60 {
            let g = kronrod15(|t| self.kernel(t), self.nodes[j], y) - rest;
            if g > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let d = self.kernel(y);
            let newton = y - g / d;
            let next = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - y).abs() <= 1e-13 * y {
                return next;
            }
            y = next;
        }
        y
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonNestedModel {
    pub direction: TestDirection,
    pub upper: f64,
    /// Range of the dark-matter mass θ.
    pub theta_range: (f64, f64),
    /// Range of the power-law index φ scanned by the exclusion test.
    pub phi_range: (f64, f64),
}

impl NonNestedModel {
    pub fn detection() -> Self {
        NonNestedModel {
            direction: TestDirection::Detection,
            upper: 100.0,
            theta_range: (1.0, 100.0),
            phi_range: (0.2, 3.0),
        }
    }

    pub fn exclusion() -> Self {
        NonNestedModel {
            direction: TestDirection::Exclusion,
            ..Self::detection()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction == TestDirection::TwoSided {
            return Err(TohmError::invalid("non-nested model supports detection or exclusion"));
        }
        if !(self.upper > 1.0 && self.upper.is_finite()) {
            return Err(TohmError::invalid("non-nested model: upper must be > 1"));
        }
        let (a, b) = self.theta_range;
        if !(a > 0.0 && a < b && b.is_finite()) {
            return Err(TohmError::invalid(format!("bad theta range [{a}, {b}]")));
        }
        let (a, b) = self.phi_range;
        if !(a >= PHI_BOX.0 && b <= PHI_BOX.1 && a < b) {
            return Err(TohmError::invalid(format!(
                "phi range [{a}, {b}] must lie inside [{}, {}]",
                PHI_BOX.0, PHI_BOX.1
            )));
        }
        Ok(())
    }

    pub fn density(&self, y: f64, eta: f64, phi: f64, theta: f64) -> f64 {
        if !(1.0..=self.upper).contains(&y) {
            return 0.0;
        }
        let f = (pareto_ln_norm(phi, self.upper) - (phi + 1.0) * y.ln()).exp();
        let g = (dm_ln_kernel(y, y.ln(), theta) - dm_ln_norm(theta, self.upper)).exp();
        (1.0 - eta) * f + eta * g
    }

    pub fn simulate(&self, eta: f64, phi: f64, theta: f64, n: usize, seed: u64) -> Result<Events> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(TohmError::invalid(format!("eta = {eta} outside [0, 1]")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(TohmError::invalid(format!("phi = {phi} must be > 0")));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(TohmError::invalid(format!("theta = {theta} must be > 0")));
        }
        check_positive_n(n)?;
        let sampler = if eta > 0.0 {
            Some(DarkMatterSampler::new(theta, self.upper)?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let pick: f64 = rng.random();
            let u: f64 = rng.random();
            let y = match &sampler {
                Some(s) if pick < eta => s.quantile(u),
                _ => pareto_quantile(u, phi, self.upper),
            };
            ys.push(y);
        }
        Events::new(ys)
    }

    fn fill_dm(&self, out: &mut [f64], data: &Events, theta: f64) {
        let k = dm_ln_norm(theta, self.upper);
        for ((o, &y), &ly) in out.iter_mut().zip(data.values()).zip(data.ln_values()) {
            *o = (dm_ln_kernel(y, ly, theta) - k).exp();
        }
    }

    fn dm_loglik(&self, data: &Events, theta: f64) -> f64 {
        -SPECTRAL_INDEX * data.sum_ln()
            - CUTOFF * data.sum() / theta
            - data.len() as f64 * dm_ln_norm(theta, self.upper)
    }
}

impl SubTestModel for NonNestedModel {
    type Data = Events;

    fn family(&self) -> ProcessFamily {
        ProcessFamily::ChiBar01
    }

    fn direction(&self) -> TestDirection {
        self.direction
    }

    fn search_range(&self) -> (f64, f64) {
        match self.direction {
            TestDirection::Exclusion => self.phi_range,
            _ => self.theta_range,
        }
    }

    fn nuisance_names(&self) -> Vec<&'static str> {
        match self.direction {
            TestDirection::Exclusion => vec!["theta"],
            _ => vec!["phi"],
        }
    }

    fn simulate_null(&self, nuisance: &[f64], n: usize, seed: u64) -> Result<Events> {
        let v = *nuisance
            .first()
            .ok_or_else(|| TohmError::invalid("non-nested null needs one parameter"))?;
        match self.direction {
            TestDirection::Exclusion => self.simulate(1.0, 1.0, v, n, seed),
            _ => self.simulate(0.0, v, self.theta_range.0, n, seed),
        }
    }

    fn fit_null(&self, data: &Events) -> Result<NullFit> {
        check_in_support(data.values(), 1.0, self.upper)?;
        match self.direction {
            TestDirection::Exclusion => {
                let m = maximize_bounded(
                    |x| self.dm_loglik(data, x[0]),
                    &[self.theta_range],
                    None,
                    &OptimizerSettings::default(),
                )?;
                Ok(NullFit {
                    nuisance: vec![m.argmax[0]],
                    loglik: m.value,
                })
            }
            _ => {
                let (phi, loglik) = fit_pareto(data.len() as f64, data.sum_ln(), self.upper)?;
                Ok(NullFit {
                    nuisance: vec![phi],
                    loglik,
                })
            }
        }
    }

    fn fit_profile(
        &self,
        data: &Events,
        at: f64,
        null: &NullFit,
        warm: Option<&ProfileFit>,
    ) -> Result<ProfileFit> {
        let n = data.len();
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; n];
        let start = warm.map_or(null.nuisance[0], |w| w.nuisance[0]);
        match self.direction {
            TestDirection::Exclusion => {
                fill_pareto(&mut f, data.ln_values(), at, self.upper);
                let (theta, loglik) = outer_max(
                    |theta| {
                        self.fill_dm(&mut g, data, theta);
                        best_eta(&f, &g).1
                    },
                    self.theta_range,
                    start,
                    null.nuisance[0],
                    at,
                )?;
                self.fill_dm(&mut g, data, theta);
                let (eta, _) = best_eta(&f, &g);
                Ok(ProfileFit {
                    at,
                    eta,
                    nuisance: vec![theta],
                    loglik,
                    degenerate: eta == 0.0,
                })
            }
            _ => {
                self.fill_dm(&mut g, data, at);
                let (phi, loglik) = outer_max(
                    |phi| {
                        fill_pareto(&mut f, data.ln_values(), phi, self.upper);
                        best_eta(&f, &g).1
                    },
                    PHI_BOX,
                    start,
                    null.nuisance[0],
                    at,
                )?;
                fill_pareto(&mut f, data.ln_values(), phi, self.upper);
                let (eta, _) = best_eta(&f, &g);
                Ok(ProfileFit {
                    at,
                    eta,
                    nuisance: vec![phi],
                    loglik,
                    degenerate: eta == 1.0,
                })
            }
        }
    }

    fn loglik(&self, data: &Events, at: f64, eta: f64, nuisance: &[f64]) -> f64 {
        let (phi, theta) = match self.direction {
            TestDirection::Exclusion => (at, nuisance[0]),
            _ => (nuisance[0], at),
        };
        if !(phi > 0.0 && theta > 0.0) {
            return f64::NAN;
        }
        let kf = pareto_ln_norm(phi, self.upper);
        let kg = dm_ln_norm(theta, self.upper);
        data.values()
            .iter()
            .zip(data.ln_values())
            .map(|(&y, &ly)| {
                let f = (kf - (phi + 1.0) * ly).exp();
                let g = (dm_ln_kernel(y, ly, theta) - kg).exp();
                ((1.0 - eta) * f + eta * g).ln()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_normalized() {
        let m = NonNestedModel::detection();
        for &(eta, phi, theta) in &[(0.0, 1.4, 35.0), (1.0, 1.4, 35.0), (0.4, 0.7, 2.0), (1.0, 1.0, 100.0)] {
            let total = integrate(|y| m.density(y, eta, phi, theta), 1.0, 100.0, 1e-14, 1e-12);
            assert!((total - 1.0).abs() < 1e-8, "{eta} {phi} {theta}: {total}");
        }
    }

    #[test]
    fn sampler_inverts_cdf() {
        let s = DarkMatterSampler::new(35.0, 100.0).unwrap();
        for &u in &[1e-6, 0.01, 0.25, 0.5, 0.9, 0.999] {
            let y = s.quantile(u);
            assert!((s.cdf(y) - u).abs() < 1e-10, "u = {u}, y = {y}");
        }
        assert_eq!(s.quantile(0.0), 1.0);
    }

    #[test]
    fn sample_mean_matches_density() {
        let m = NonNestedModel::detection();
        let d = m.simulate(1.0, 1.4, 35.0, 20_000, 4).unwrap();
        let n = d.len() as f64;
        let mean = d.values().iter().sum::<f64>() / n;
        let var = d.values().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = integrate(|y| y * m.density(y, 1.0, 1.4, 35.0), 1.0, 100.0, 1e-14, 1e-12);
        assert!((mean - exact).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn exclusion_direction_behaviour() {
        let m = NonNestedModel::exclusion();
        let grid = crate::grid::ScanGrid::equally_spaced(0.2, 3.0, 8).unwrap();
        // data from the dark-matter model: statistic small
        let dm = m.simulate(1.0, 1.4, 35.0, 200, 21).unwrap();
        let r = crate::models::scan(&m, &dm, &grid).unwrap();
        assert!(crate::grid::global_max(&r.trace).0 < 5.0);
        assert!((r.null.nuisance[0] - 35.0).abs() < 25.0);
        // data from the power law: large
        let pl = m.simulate(0.0, 1.4, 35.0, 200, 22).unwrap();
        let r = crate::models::scan(&m, &pl, &grid).unwrap();
        assert!(crate::grid::global_max(&r.trace).0 > 10.0);
    }

    #[test]
    fn detection_loglik_consistency() {
        let m = NonNestedModel::detection();
        let d = m.simulate(0.3, 1.4, 35.0, 300, 2).unwrap();
        let null = m.fit_null(&d).unwrap();
        let fit = m.fit_profile(&d, 30.0, &null, None).unwrap();
        assert!(fit.loglik >= null.loglik - 1e-6);
        let direct = m.loglik(&d, 30.0, fit.eta, &fit.nuisance);
        assert!((direct - fit.loglik).abs() < 1e-6 * direct.abs());
    }
}

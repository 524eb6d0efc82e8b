//! Gaussian bump of unknown location on a truncated power-law background.

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
use crate::numerics::special::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpModel {
    /// Upper end of the energy band; the lower end is 1.
    pub upper: f64,
    /// Bump standard deviation as a fraction of its location.
    pub width: f64,
    pub range: (f64, f64),
}

impl Default for BumpModel {
    fn default() -> Self {
        BumpModel {
            upper: 35.0,
            width: 0.1,
            range: (1.0, 35.0),
        }
    }
}

impl BumpModel {
    pub fn new(upper: f64, width: f64, range: (f64, f64)) -> Result<Self> {
        let m = BumpModel {
            upper,
            width,
            range,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upper > 1.0 && self.upper.is_finite()) {
            return Err(TohmError::invalid("bump model: upper must be > 1"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(TohmError::invalid("bump model: width must be > 0"));
        }
        let (lo, hi) = self.range;
        if !(lo >= 1.0 && hi <= self.upper && lo < hi) {
            return Err(TohmError::invalid(format!(
                "bump model: search range [{lo}, {hi}] must lie inside [1, {}]",
                self.upper
            )));
        }
        Ok(())
    }

    fn sigma(&self, theta: f64) -> f64 {
        self.width * theta
    }

    /// ln of the bump normalizer σ√(2π)(Φ(b) − Φ(a)).
    fn bump_ln_norm(&self, theta: f64) -> f64 {
        let s = self.sigma(theta);
        let a = (1.0 - theta) / s;
        let b = (self.upper - theta) / s;
        let mass = normal_cdf(-a) - normal_cdf(-b);
        (s * (2.0 * std::f64::consts::PI).sqrt()).ln() + mass.ln()
    }

    pub fn signal_density(&self, y: f64, theta: f64) -> f64 {
        if !(1.0..=self.upper).contains(&y) {
            return 0.0;
        }
        let s = self.sigma(theta);
        (-(y - theta) * (y - theta) / (2.0 * s * s) - self.bump_ln_norm(theta)).exp()
    }

    pub fn background_density(&self, y: f64, phi: f64) -> f64 {
        if !(1.0..=self.upper).contains(&y) {
            return 0.0;
        }
        (pareto_ln_norm(phi, self.upper) - (phi + 1.0) * y.ln()).exp()
    }

    pub fn density(&self, y: f64, eta: f64, phi: f64, theta: f64) -> f64 {
        (1.0 - eta) * self.background_density(y, phi) + eta * self.signal_density(y, theta)
    }

    fn fill_signal(&self, out: &mut [f64], ys: &[f64], theta: f64) {
        let s = self.sigma(theta);
        let k = self.bump_ln_norm(theta);
        let inv = 1.0 / (2.0 * s * s);
        for (o, &y) in out.iter_mut().zip(ys) {
            *o = (-(y - theta) * (y - theta) * inv - k).exp();
        }
    }

    fn check_params(&self, eta: f64, phi: f64, theta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(TohmError::invalid(format!("eta = {eta} outside [0, 1]")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(TohmError::invalid(format!("phi = {phi} must be > 0")));
        }
        if !(theta >= 1.0 && theta <= self.upper) {
            return Err(TohmError::invalid(format!(
                "theta = {theta} outside [1, {}]",
                self.upper
            )));
        }
        Ok(())
    }

    /// `n` draws from the mixture by inverse-CDF sampling.
    pub fn simulate(&self, eta: f64, phi: f64, theta: f64, n: usize, seed: u64) -> Result<Events> {
        self.check_params(eta, phi, theta)?;
        check_positive_n(n)?;
        let s = self.sigma(theta);
        let lo = normal_cdf((1.0 - theta) / s);
        let hi = normal_cdf((self.upper - theta) / s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let pick: f64 = rng.random();
            let u: f64 = rng.random();
            let y = if pick < eta {
                let p = (lo + u * (hi - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                (theta + s * normal_quantile(p)?).clamp(1.0, self.upper)
            } else {
                pareto_quantile(u, phi, self.upper)
            };
            ys.push(y);
        }
        Events::new(ys)
    }
}

impl SubTestModel for BumpModel {
    type Data = Events;

    fn family(&self) -> ProcessFamily {
        ProcessFamily::ChiBar01
    }

    fn direction(&self) -> TestDirection {
        TestDirection::Detection
    }

    fn search_range(&self) -> (f64, f64) {
        self.range
    }

    fn nuisance_names(&self) -> Vec<&'static str> {
        vec!["phi"]
    }

    fn simulate_null(&self, nuisance: &[f64], n: usize, seed: u64) -> Result<Events> {
        let phi = *nuisance
            .first()
            .ok_or_else(|| TohmError::invalid("bump null needs phi"))?;
        self.simulate(0.0, phi, self.range.0, n, seed)
    }

    fn fit_null(&self, data: &Events) -> Result<NullFit> {
        check_in_support(data.values(), 1.0, self.upper)?;
        let (phi, loglik) = fit_pareto(data.len() as f64, data.sum_ln(), self.upper)?;
        Ok(NullFit {
            nuisance: vec![phi],
            loglik,
        })
    }

    fn fit_profile(
        &self,
        data: &Events,
        at: f64,
        null: &NullFit,
        warm: Option<&ProfileFit>,
    ) -> Result<ProfileFit> {
        let n = data.len();
        let mut g = vec![0.0; n];
        self.fill_signal(&mut g, data.values(), at);
        let mut f = vec![0.0; n];
        let start = warm.map_or(null.nuisance[0], |w| w.nuisance[0]);
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

    fn loglik(&self, data: &Events, at: f64, eta: f64, nuisance: &[f64]) -> f64 {
        let phi = nuisance[0];
        if !(phi > 0.0) {
            return f64::NAN;
        }
        let kf = pareto_ln_norm(phi, self.upper);
        let s = self.sigma(at);
        let kg = self.bump_ln_norm(at);
        data.values()
            .iter()
            .zip(data.ln_values())
            .map(|(&y, &ly)| {
                let f = (kf - (phi + 1.0) * ly).exp();
                let g = (-(y - at) * (y - at) / (2.0 * s * s) - kg).exp();
                ((1.0 - eta) * f + eta * g).ln()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::mixture::pareto_cdf;
    use crate::numerics::integrate;

    #[test]
    fn densities_normalized() {
        let m = BumpModel::default();
        for &(eta, phi, theta) in &[(0.0, 1.4, 3.5), (0.3, 0.5, 1.0), (1.0, 2.0, 34.0), (0.5, 1.4, 3.5)] {
            let total = integrate(|y| m.density(y, eta, phi, theta), 1.0, 35.0, 1e-13, 1e-12);
            assert!((total - 1.0).abs() < 1e-8, "{eta} {phi} {theta}: {total}");
        }
    }

    #[test]
    fn background_sample_matches_cdf() {
        let m = BumpModel::default();
        let d = m.simulate(0.0, 1.4, 3.5, 1_000_000, 11).unwrap();
        let mut ys = d.values().to_vec();
        ys.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        let sup = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let c = pareto_cdf(y, 1.4, 35.0);
                (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(sup < 0.002, "sup distance {sup}");
    }

    #[test]
    fn signal_sample_mean() {
        let m = BumpModel::default();
        let d = m.simulate(1.0, 1.4, 3.5, 20_000, 5).unwrap();
        let n = d.len() as f64;
        let mean = d.values().iter().sum::<f64>() / n;
        let var = d.values().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = integrate(|y| y * m.signal_density(y, 3.5), 1.0, 35.0, 1e-13, 1e-12);
        assert!((mean - exact).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn seeded_simulation_is_reproducible() {
        let m = BumpModel::default();
        let a = m.simulate(0.1, 1.4, 3.5, 500, 99).unwrap();
        let b = m.simulate(0.1, 1.4, 3.5, 500, 99).unwrap();
        assert_eq!(a, b);
        assert!(m.simulate(1.2, 1.4, 3.5, 10, 1).is_err());
        assert!(m.simulate(0.1, -1.0, 3.5, 10, 1).is_err());
        assert!(m.simulate(0.1, 1.4, 50.0, 10, 1).is_err());
        assert!(m.simulate(0.1, 1.4, 3.5, 0, 1).is_err());
    }

    #[test]
    fn null_fit_matches_grid_search() {
        let m = BumpModel::default();
        let d = m.simulate(0.0, 1.4, 3.5, 100_000, 3).unwrap();
        let fit = m.fit_null(&d).unwrap();
        assert!((fit.nuisance[0] - 1.4).abs() < 0.02);
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..=40_000 {
            let phi = 1.3 + k as f64 * 5e-6;
            let v = m.loglik(&d, 3.5, 0.0, &[phi]);
            if v > best.1 {
                best = (phi, v);
            }
        }
        assert!((fit.nuisance[0] - best.0).abs() < 1e-4);
    }

    #[test]
    fn profile_far_from_signal_is_zero() {
        let m = BumpModel::default();
        let d = m.simulate(0.05, 1.4, 3.5, 3000, 8).unwrap();
        let null = m.fit_null(&d).unwrap();
        let near = m.fit_profile(&d, 3.5, &null, None).unwrap();
        assert!(near.eta > 0.0 && near.loglik >= null.loglik - 1e-6);
        assert!(m.subtest_stat(null.loglik, &near) > 10.0);
        let lik = m.loglik(&d, 3.5, near.eta, &near.nuisance);
        assert!((lik - near.loglik).abs() < 1e-6 * lik.abs());
    }

    #[test]
    fn identical_values_still_fit() {
        let m = BumpModel::default();
        let d = Events::new(vec![5.0; 50]).unwrap();
        let fit = m.fit_null(&d).unwrap();
        assert!(fit.loglik.is_finite());
    }
}

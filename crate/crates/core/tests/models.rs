use proptest::prelude::*;

use tohm::exec::replicate_seed;
use tohm::grid::global_max;
use tohm::models::{scan, BreakpointModel, BumpModel, NonNestedModel, SubTestModel};
use tohm::numerics::special::ks_test;
use tohm::numerics::normal_cdf;
use tohm::ScanGrid;

fn check_ordering<M: SubTestModel>(m: &M, data: &M::Data, grid: &ScanGrid) -> Result<(), TestCaseError> {
    let res = scan(m, data, grid).unwrap();
    for fit in &res.fits {
        prop_assert!(fit.loglik >= res.null.loglik - 1e-6, "at {}: {} < {}", fit.at, fit.loglik, res.null.loglik);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bump_likelihood_ordering(seed in any::<u64>(), eta in 0.0f64..0.1) {
        let m = BumpModel::default();
        let d = m.simulate(eta, 1.4, 6.0, 400, seed).unwrap();
        let grid = ScanGrid::equally_spaced(1.0, 35.0, 25).unwrap();
        check_ordering(&m, &d, &grid)?;
        let t = scan(&m, &d, &grid).unwrap().trace;
        prop_assert!(t.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn nonnested_likelihood_ordering(seed in any::<u64>(), eta in 0.0f64..1.0) {
        let det = NonNestedModel::detection();
        let d = det.simulate(eta, 1.4, 35.0, 200, seed).unwrap();
        check_ordering(&det, &d, &ScanGrid::equally_spaced(1.0, 100.0, 15).unwrap())?;
        let exc = NonNestedModel::exclusion();
        check_ordering(&exc, &d, &ScanGrid::equally_spaced(0.2, 3.0, 15).unwrap())?;
    }

    #[test]
    fn breakpoint_likelihood_ordering(seed in any::<u64>(), xi in -0.2f64..0.4) {
        let m = BreakpointModel::default();
        let d = m.simulate(-10.0, 0.14, xi, 30.0, 200_000, seed).unwrap();
        check_ordering(&m, &d, &ScanGrid::equally_spaced(20.0, 44.0, 20).unwrap())?;
    }

    #[test]
    fn simulation_is_seed_deterministic(seed in any::<u64>()) {
        let m = BumpModel::default();
        prop_assert_eq!(m.simulate(0.05, 1.4, 3.5, 300, seed).unwrap(), m.simulate(0.05, 1.4, 3.5, 300, seed).unwrap());
        let n = NonNestedModel::detection();
        prop_assert_eq!(n.simulate(0.5, 1.4, 35.0, 100, seed).unwrap(), n.simulate(0.5, 1.4, 35.0, 100, seed).unwrap());
        let b = BreakpointModel::default();
        prop_assert_eq!(b.simulate(-10.0, 0.14, 0.3, 30.0, 10_000, seed).unwrap(), b.simulate(-10.0, 0.14, 0.3, 30.0, 10_000, seed).unwrap());
    }

    #[test]
    fn refined_grid_max_dominates(seed in any::<u64>()) {
        let m = BumpModel::default();
        let d = m.simulate(0.02, 1.4, 5.0, 500, seed).unwrap();
        let coarse = ScanGrid::equally_spaced(1.0, 35.0, 18).unwrap();
        let fine = ScanGrid::equally_spaced(1.0, 35.0, 35).unwrap();
        let (c, _) = global_max(&scan(&m, &d, &coarse).unwrap().trace);
        let (f, _) = global_max(&scan(&m, &d, &fine).unwrap().trace);
        prop_assert!(f >= c - 1e-6, "fine {f} < coarse {c}");
    }
}

#[test]
fn profile_at_the_maximum_matches_full_fit() {
    // on the grid the profile likelihood at θ̂ is the full MLE value
    let m = BumpModel::default();
    let d = m.simulate(0.05, 1.4, 3.5, 2000, 17).unwrap();
    let grid = ScanGrid::equally_spaced(1.0, 35.0, 69).unwrap();
    let res = scan(&m, &d, &grid).unwrap();
    let best = res.fits.iter().max_by(|a, b| a.loglik.total_cmp(&b.loglik)).unwrap();
    let direct = m.loglik(&d, best.at, best.eta, &best.nuisance);
    assert!((direct - best.loglik).abs() < 1e-8);
    for eta in [0.0, best.eta * 0.5, (best.eta * 1.5).min(1.0)] {
        for phi in [best.nuisance[0] - 0.05, best.nuisance[0] + 0.05] {
            assert!(m.loglik(&d, best.at, eta, &[phi]) <= best.loglik + 1e-9);
        }
    }
}

#[test]
fn breakpoint_signed_root_is_standard_normal() {
    let m = BreakpointModel::default();
    let at = 32.0;
    let mut q = Vec::new();
    for r in 0..300 {
        let d = m.simulate(-10.0, 0.14, 0.0, 30.0, 300_000, replicate_seed(33, r)).unwrap();
        let null = m.fit_null(&d).unwrap();
        let fit = m.fit_profile(&d, at, &null, None).unwrap();
        q.push(m.subtest_stat(null.loglik, &fit));
    }
    let (_, p) = ks_test(&q, normal_cdf);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn exclusion_statistic_small_under_dark_matter() {
    let m = NonNestedModel::exclusion();
    let grid = ScanGrid::equally_spaced(0.2, 3.0, 15).unwrap();
    let mut maxima: Vec<f64> = (0..21)
        .map(|r| {
            let d = m.simulate(1.0, 1.4, 35.0, 200, replicate_seed(44, r)).unwrap();
            global_max(&scan(&m, &d, &grid).unwrap().trace).0
        })
        .collect();
    maxima.sort_by(|a, b| a.total_cmp(b));
    assert!(maxima[10] < 1.0, "median {}", maxima[10]);
}

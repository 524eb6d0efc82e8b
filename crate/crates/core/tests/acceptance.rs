//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Skipped criteria do not fail the run.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tohm::bound::{a_of_c, log_a, marginal_survival, suggest_c0, tohm_bound};
use tohm::exec::replicate_seed;
use tohm::grid::{count_exceedances, count_upcrossings};
use tohm::io::read_grouped;
use tohm::models::{scan, BreakpointModel, BumpModel, SubTestModel};
use tohm::montecarlo::{
    estimate_upcrossings, oracle_curve, threshold_stats_streamed, EnsembleSettings, ModelNull,
    NullSource, SyntheticProcess,
};
use tohm::numerics::special::{chi2_survival, ks_test};
use tohm::pipeline::{analyze, AnalysisSettings, C0Choice};
use tohm::{BoundReport, Execution, ProcessFamily, ProcessTrace, ScanGrid};

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn with_limit(o: Outcome, elapsed: Duration, limit: Option<Duration>) -> Outcome {
    match (o.status, limit) {
        (Status::Pass, Some(l)) if elapsed > l => Outcome {
            status: Status::Fail,
            detail: format!("{} (runtime {:.1}s over {:.0}s limit)", o.detail, elapsed.as_secs_f64(), l.as_secs_f64()),
        },
        (status, _) => Outcome { status, ..o },
    }
}

fn execution() -> Execution {
    let workers = std::env::var("TOHM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1);
    Execution::with_workers(workers)
}

fn ensemble(n: usize, n_obs: usize, seed: u64) -> EnsembleSettings {
    EnsembleSettings {
        n_replicates: n,
        n_obs,
        master_seed: seed,
        execution: execution(),
    }
}

fn brute_counts(v: &[f64], c: f64) -> (usize, usize) {
    let mut up = 0;
    let mut ex = 0;
    let mut above = false;
    for (r, &x) in v.iter().enumerate() {
        let now = x > c;
        if now {
            ex += 1;
        }
        if r > 0 && now && !above {
            up += 1;
        }
        above = now;
    }
    (up, ex)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let r = rng.random_range(2..=50);
        // values on a coarse lattice so thresholds often tie with trace values
        let vals: Vec<f64> = (0..r).map(|_| rng.random_range(-8..=8) as f64 * 0.5).collect();
        let c = if rng.random::<bool>() {
            vals[rng.random_range(0..r)]
        } else {
            rng.random_range(-5.0..5.0)
        };
        let t = ProcessTrace::new(ScanGrid::equally_spaced(0.0, 1.0, r).unwrap(), vals.clone()).unwrap();
        let got = (count_upcrossings(&t, c).unwrap(), count_exceedances(&t, c).unwrap());
        if got != brute_counts(&vals, c) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over 10000 traces"))
}

fn criterion_2() -> Outcome {
    let p = SyntheticProcess::iid(ProcessFamily::GaussianOneSided, (0.0, 1.0)).unwrap();
    let grid = ScanGrid::equally_spaced(0.0, 1.0, 100).unwrap();
    let b = p.bind(&grid).unwrap();
    let s = threshold_stats_streamed(b.as_ref(), &[1.645], &ensemble(10_000, 1, 2)).unwrap()[0];
    let (ex_want, up_want) = (5.00, 4.70);
    let ok_ex = (s.e_exceedances - ex_want).abs() <= 3.0 * s.se_exceedances;
    let ok_up = (s.e_upcrossings - up_want).abs() <= 3.0 * s.se_upcrossings;
    verdict(
        ok_ex && ok_up,
        format!(
            "E[exc] = {:.3} ± {:.3} (want 5.00), E[up] = {:.3} ± {:.3} (want 4.70)",
            s.e_exceedances, s.se_exceedances, s.e_upcrossings, s.se_upcrossings
        ),
    )
}

fn smooth_chi2() -> (SyntheticProcess, ScanGrid) {
    let (lo, hi) = (0.0, 1.0);
    let p = SyntheticProcess::new(ProcessFamily::ChiSquare { s: 1 }, (lo, hi), 0.1 * (hi - lo)).unwrap();
    (p, ScanGrid::equally_spaced(lo, hi, 200).unwrap())
}

fn criterion_3() -> Outcome {
    let (p, grid) = smooth_chi2();
    let b = p.bind(&grid).unwrap();
    let fam = p.family;
    let s = threshold_stats_streamed(b.as_ref(), &[1.0, 9.0], &ensemble(10_000, 1, 3)).unwrap();
    let ratio = a_of_c(fam, 9.0).unwrap() / a_of_c(fam, 1.0).unwrap();
    let extrapolated = ratio * s[0].e_upcrossings;
    let direct = s[1].e_upcrossings;
    let se = (s[1].se_upcrossings.powi(2) + (ratio * s[0].se_upcrossings).powi(2)).sqrt();
    verdict(
        (direct - extrapolated).abs() <= 3.0 * se,
        format!("direct E[N_9] = {direct:.5}, extrapolated = {extrapolated:.5}, 3 SE = {:.5}", 3.0 * se),
    )
}

fn criterion_4() -> Outcome {
    let (p, grid) = smooth_chi2();
    let b = p.bind(&grid).unwrap();
    let fam = p.family;
    let c0 = 1.0;
    let e = estimate_upcrossings(b.as_ref(), c0, &ensemble(10_000, 1, 40), false).unwrap();
    let ladder: Vec<f64> = (1..=8).map(|k| 2.0 * k as f64).collect();
    let oracle = oracle_curve(b.as_ref(), &ladder, &ensemble(10_000, 1, 41)).unwrap();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for row in &oracle {
        let bound = tohm_bound(fam, row.c, c0, e.e_upcrossings, e.mc_std_error).unwrap().pvalue;
        worst = worst.min((bound - (row.p_hat - 3.0 * row.mc_err)) / row.mc_err.max(1e-300));
        ok &= bound >= row.p_hat - 3.0 * row.mc_err;
    }
    let last = oracle.last().unwrap();
    let bound_last = tohm_bound(fam, last.c, c0, e.e_upcrossings, 0.0).unwrap().pvalue;
    let gap = (bound_last / last.p_hat).log10();
    verdict(
        ok && gap.abs() < 0.5,
        format!(
            "bound ≥ oracle − 3SE on {} thresholds: {ok}; at c = {}: bound {:.3e}, oracle {:.3e} ± {:.1e}, log10 gap {gap:.3}",
            ladder.len(),
            last.c,
            bound_last,
            last.p_hat,
            last.mc_err
        ),
    )
}

fn criterion_5() -> Outcome {
    let fam = ProcessFamily::ChiSquare { s: 1 };
    let r = 100;
    // Bonferroni p = 1e-3 for the i.i.d. sequence
    let c = {
        let (mut lo, mut hi) = (10.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if r as f64 * marginal_survival(fam, mid) > 1e-3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let bonf = r as f64 * marginal_survival(fam, c);

    // i.i.d.: a(c)/a(c0) does not describe a sequence without smoothness, so
    // the upcrossings are estimated at c itself
    let iid = SyntheticProcess::iid(fam, (0.0, 1.0)).unwrap();
    let grid = ScanGrid::equally_spaced(0.0, 1.0, r).unwrap();
    let b = iid.bind(&grid).unwrap();
    let s = threshold_stats_streamed(b.as_ref(), &[c], &ensemble(1_000_000, 1, 5)).unwrap()[0];
    let p_iid = tohm_bound(fam, c, c, s.e_upcrossings, s.se_upcrossings).unwrap();
    let ratio_iid = bonf / p_iid.pvalue;

    let smooth = SyntheticProcess::new(fam, (0.0, 1.0), 0.1).unwrap();
    let b = smooth.bind(&grid).unwrap();
    let e = estimate_upcrossings(b.as_ref(), 1.0, &ensemble(10_000, 1, 50), false).unwrap();
    let p_cor = tohm_bound(fam, c, 1.0, e.e_upcrossings, e.mc_std_error).unwrap();
    let ratio_cor = bonf / p_cor.pvalue;
    verdict(
        (0.9..=1.1).contains(&ratio_iid) && ratio_cor > 1.5,
        format!("c = {c:.3}: i.i.d. ratio {ratio_iid:.3} (E[N_c] = {:.3e} ± {:.1e}), correlated ratio {ratio_cor:.2}", s.e_upcrossings, s.se_upcrossings),
    )
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for s in [2u32, 3, 5] {
        let fam = ProcessFamily::ChiSquare { s };
        let c0 = suggest_c0(fam);
        let at = log_a(fam, (s - 1) as f64).unwrap();
        let n = 10_000;
        let beaten = (1..=n)
            .map(|k| 20.0 * k as f64 / n as f64)
            .filter(|&c| log_a(fam, c).unwrap() > at)
            .count();
        ok &= c0 == Some((s - 1) as f64) && beaten == 0;
        detail.push(format!("s={s}: c0={c0:?}, grid points above a(s-1): {beaten}"));
    }
    verdict(ok, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let m = BumpModel::default();
    let at = 5.0;
    let mut stats = Vec::new();
    for r in 0..500 {
        let d = m.simulate(0.0, 1.4, 3.5, 1000, replicate_seed(7, r)).unwrap();
        let null = m.fit_null(&d).unwrap();
        let fit = m.fit_profile(&d, at, &null, None).unwrap();
        stats.push(m.subtest_stat(null.loglik, &fit));
    }
    let zeros = stats.iter().filter(|&&t| t == 0.0).count() as f64 / stats.len() as f64;
    let positive: Vec<f64> = stats.into_iter().filter(|&t| t > 0.0).collect();
    let (d, p) = ks_test(&positive, |x| 1.0 - chi2_survival(1, x));
    verdict(
        (0.45..=0.55).contains(&zeros) && p > 0.01,
        format!("θ_r = {at}: zero fraction {zeros:.3}, KS D = {d:.4}, p = {p:.3} on {} positives", positive.len()),
    )
}

fn down_data_path() -> PathBuf {
    std::env::var_os("TOHM_DOWN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/down.csv"))
}

fn criterion_8() -> Outcome {
    let path = down_data_path();
    if !path.exists() {
        return Outcome {
            status: Status::Skip,
            detail: format!("dataset not found at {}", path.display()),
        };
    }
    let data = read_grouped(&path).unwrap();
    let model = BreakpointModel::for_design(&data, (20.0, 44.0)).unwrap();
    let grid = ScanGrid::equally_spaced(20.0, 44.0, 50).unwrap();
    let settings = AnalysisSettings {
        c0: C0Choice::Fixed(0.0),
        ensemble: ensemble(200, data.total_trials() as usize, 8),
        null_nuisance: None,
        keep_traces: false,
    };
    let a = analyze(&model, &data, &grid, &settings).unwrap();
    let r = &a.report;
    let ok = (r.c_R - 11.826).abs() <= 0.01
        && (r.theta_hat - 31.266).abs() <= grid.step()
        && (r.sigma_tohm - 11.52).abs() <= 0.1;
    verdict(
        ok,
        format!(
            "c_R = {:.3}, θ̂ = {:.3}, Ê[N_0] = {:.3} ± {:.3}, TOHM p = {:.3e} ({:.2}σ)",
            r.c_R, r.theta_hat, r.expected_upcrossings_c0, r.mc_error_c0, r.tohm_pvalue, r.sigma_tohm
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn criterion_9() -> Outcome {
    let m = BumpModel::default();
    let grid = ScanGrid::equally_spaced(1.0, 35.0, 100).unwrap();
    let c0 = 0.1;
    let (n_dm, n_bg) = (64usize, 2274usize);
    let n = n_dm + n_bg;
    // signal fraction of the reference fit; the nominal 64 events alone
    // give a weaker bump and are reported for reference
    let eta = 0.045;
    let eta_nominal = n_dm as f64 / n as f64;

    // one null ensemble at the generating background serves both parts
    let null = ModelNull::new(m.clone(), vec![1.4]);
    let b = null.bind(&grid).unwrap();
    let e = estimate_upcrossings(b.as_ref(), c0, &ensemble(200, 1000, 90), false).unwrap();

    let report = |seed: u64, eta: f64| -> Option<BoundReport> {
        let d = m.simulate(eta, 1.4, 3.5, n, seed).unwrap();
        let t = scan(&m, &d, &grid).unwrap().trace;
        // c_R below c0 leaves the bound undefined: no evidence against H0
        BoundReport::from_trace(m.family(), &t, c0, e.e_upcrossings, e.mc_std_error).ok()
    };
    let medians = |eta: f64| {
        let (mut thetas, mut sigmas) = (Vec::new(), Vec::new());
        for r in 0..20 {
            match report(replicate_seed(91, r), eta) {
                Some(rep) => {
                    thetas.push(rep.theta_hat);
                    sigmas.push(rep.sigma_tohm);
                }
                None => sigmas.push(0.0),
            }
        }
        (median(thetas), median(sigmas))
    };
    let (med_theta, med_sigma) = medians(eta);
    let (nom_theta, nom_sigma) = medians(eta_nominal);

    let n_null = 200;
    let rejected = (0..n_null)
        .filter(|&r| report(replicate_seed(92, r as u64), 0.0).is_some_and(|rep| rep.tohm_pvalue <= 0.05))
        .count();
    let rate = rejected as f64 / n_null as f64;
    let limit = 0.05 + 3.0 * (0.05 * 0.95 / n_null as f64).sqrt();
    verdict(
        (3.1..=3.9).contains(&med_theta) && med_sigma > 3.0 && rate <= limit,
        format!(
            "Ê[N_{c0}] = {:.2} ± {:.2}; signal η = {eta}: median θ̂ = {med_theta:.3}, median σ = {med_sigma:.2}; null: rejection rate {rate:.3} (limit {limit:.3}); [info] η = 64/2338: median θ̂ = {nom_theta:.3}, median σ = {nom_sigma:.2}",
            e.e_upcrossings, e.mc_std_error
        ),
    )
}

fn criterion_10() -> Outcome {
    let m = BumpModel::default();
    let data = m.simulate(0.03, 1.4, 3.5, 1500, 10).unwrap();
    let grid = ScanGrid::equally_spaced(1.0, 35.0, 60).unwrap();
    let run = |execution: Execution| {
        let settings = AnalysisSettings {
            c0: C0Choice::Fixed(0.1),
            ensemble: EnsembleSettings {
                n_replicates: 64,
                n_obs: 1000,
                master_seed: 2024,
                execution,
            },
            null_nuisance: None,
            keep_traces: false,
        };
        let a = analyze(&m, &data, &grid, &settings).unwrap();
        (
            serde_json::to_vec(&a.report).unwrap(),
            serde_json::to_vec(&a.ensemble.summary()).unwrap(),
        )
    };
    let one = run(Execution::with_workers(1));
    let four = run(Execution::with_workers(4));
    verdict(one == four, format!("1 vs 4 workers: report {} bytes, identical: {}", one.0.len(), one == four))
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; they are ignored
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    type Criterion = (usize, &'static str, fn() -> Outcome, Option<u64>);
    let criteria: [Criterion; 10] = [
        (1, "counting oracle equivalence", criterion_1, Some(5)),
        (2, "i.i.d. closed forms", criterion_2, Some(30)),
        (3, "extrapolation fidelity", criterion_3, Some(120)),
        (4, "bound validity against the oracle", criterion_4, None),
        (5, "Bonferroni equivalence", criterion_5, Some(120)),
        (6, "suggest_c0 exactness", criterion_6, None),
        (7, "chi-bar-squared null shape", criterion_7, None),
        (8, "breakpoint golden values", criterion_8, None),
        (9, "end-to-end detection sanity", criterion_9, Some(600)),
        (10, "determinism across worker counts", criterion_10, None),
    ];
    let mut failed = 0;
    for (k, name, run, limit) in criteria {
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = with_limit(outcome, elapsed, limit.map(Duration::from_secs));
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!(
            "criterion {k:>2} [{tag}] {name}: {} ({:.1}s)",
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

use std::path::{Path, PathBuf};

use serde::Serialize;

use tohm::bound::{observed_max, suggest_c0, tohm_bound, BoundReport};
use tohm::diagnostics::{berman_curve, default_tau_ladder, ratio_curve, score_covariance, BermanRow, RatioRow};
use tohm::io;
use tohm::models::{
    scan, BreakpointModel, BumpModel, Events, GroupedBinomial, NonNestedModel, NullFit, ScanResult,
    SubTestModel,
};
use tohm::montecarlo::{
    c0_sensitivity, estimate_upcrossings, simulate_traces, threshold_stats, upcrossing_curve,
    ElbowRow, EnsembleSettings, ModelNull, NullSource, OracleRow, SyntheticProcess,
};
use tohm::{Execution, ProcessFamily, ScanGrid};

use crate::config::{ModelKind, RunConfig, TestKind};
use crate::CliError;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub execution: Execution,
}

enum Model {
    Bump(BumpModel),
    NonNested(NonNestedModel),
    Breakpoint(BreakpointModel),
    Synthetic(SyntheticProcess),
}

enum Dataset {
    Events(Events),
    Grouped(GroupedBinomial),
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn grid(&self) -> Result<ScanGrid, CliError> {
        let (lo, hi) = self.cfg.range();
        Ok(ScanGrid::equally_spaced(lo, hi, self.cfg.resolution)?)
    }

    fn data(&self) -> Result<Option<Dataset>, CliError> {
        let Some(p) = &self.cfg.io.data else {
            return Ok(None);
        };
        Ok(Some(match self.cfg.model() {
            ModelKind::Bump | ModelKind::Nonnested => Dataset::Events(io::read_events(p)?),
            ModelKind::Breakpoint => Dataset::Grouped(io::read_grouped(p)?),
            ModelKind::Synthetic => {
                return Err(CliError::config("synthetic processes take no dataset; drop --data"))
            }
        }))
    }

    fn require_data(&self) -> Result<Dataset, CliError> {
        self.data()?
            .ok_or_else(|| CliError::config("a dataset is required: pass --data or set io.data"))
    }

    /// Observations per null replicate: configured, else the size of the dataset.
    fn n_obs(&self, data: Option<&Dataset>) -> usize {
        self.cfg.n_obs.unwrap_or(match data {
            Some(Dataset::Events(e)) => e.len(),
            Some(Dataset::Grouped(g)) => g.total_trials() as usize,
            None => 1000,
        })
    }

    fn settings(&self, n_obs: usize) -> EnsembleSettings {
        EnsembleSettings {
            n_replicates: self.cfg.n_replicates,
            n_obs,
            master_seed: self.cfg.master_seed,
            execution: self.execution,
        }
    }

    fn model(&self, data: Option<&Dataset>) -> Result<Model, CliError> {
        let cfg = &self.cfg;
        let range = cfg.range();
        Ok(match cfg.model() {
            ModelKind::Bump => Model::Bump(BumpModel::new(
                cfg.param_or("upper", 35.0),
                cfg.param_or("width", 0.1),
                range,
            )?),
            ModelKind::Nonnested => {
                let mut m = match cfg.test() {
                    TestKind::Exclusion => NonNestedModel::exclusion(),
                    _ => NonNestedModel::detection(),
                };
                m.upper = cfg.param_or("upper", m.upper);
                match cfg.test() {
                    TestKind::Exclusion => m.phi_range = range,
                    _ => m.theta_range = range,
                }
                m.validate()?;
                Model::NonNested(m)
            }
            ModelKind::Breakpoint => {
                let m = match data {
                    Some(Dataset::Grouped(g)) => BreakpointModel::for_design(g, range)?,
                    _ => BreakpointModel {
                        range,
                        ..BreakpointModel::default()
                    },
                };
                m.validate()?;
                Model::Breakpoint(m)
            }
            ModelKind::Synthetic => {
                let ell = cfg.param_or("ell", 0.1 * (range.1 - range.0));
                Model::Synthetic(SyntheticProcess::new(cfg.family(), range, ell)?)
            }
        })
    }

    /// Nuisance values of the null simulations: the null MLE of the dataset
    /// when one is given, else the configured parameters of the same names.
    fn null_source(&self, model: Model, data: Option<&Dataset>) -> Result<Box<dyn NullSource>, CliError> {
        fn build<M: SubTestModel + 'static>(
            ctx: &Ctx,
            m: M,
            fit: Option<NullFit>,
        ) -> Result<Box<dyn NullSource>, CliError> {
            let nuisance = match fit {
                Some(f) => f.nuisance,
                None => m
                    .nuisance_names()
                    .iter()
                    .map(|n| ctx.cfg.need(n))
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::config(format!("{}, or pass --data to use the null fit", e.message)))?,
            };
            Ok(Box::new(ModelNull::new(m, nuisance)))
        }
        Ok(match (model, data) {
            (Model::Bump(m), Some(Dataset::Events(d))) => {
                let f = m.fit_null(d)?;
                build(self, m, Some(f))?
            }
            (Model::NonNested(m), Some(Dataset::Events(d))) => {
                let f = m.fit_null(d)?;
                build(self, m, Some(f))?
            }
            (Model::Breakpoint(m), Some(Dataset::Grouped(d))) => {
                let f = m.fit_null(d)?;
                build(self, m, Some(f))?
            }
            (Model::Bump(m), _) => build(self, m, None)?,
            (Model::NonNested(m), _) => build(self, m, None)?,
            (Model::Breakpoint(m), _) => build(self, m, None)?,
            (Model::Synthetic(p), _) => Box::new(p),
        })
    }

    fn refuse_c0_above(&self, c0: f64, c_r: f64) -> Result<(), CliError> {
        if c0 > c_r {
            return Err(CliError::config(format!(
                "c0 = {c0} exceeds the observed maximum c_R = {c_r}; the bound needs c0 <= c_R. \
                 Lower c0 (for example --c0 0) and rerun"
            )));
        }
        Ok(())
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn simulate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let seed = cfg.master_seed;
    let (lo, hi) = cfg.range();
    let n = cfg.param("n").map_or(ctx.n_obs(None), |v| v as usize);
    if n == 0 {
        return Err(CliError::config("params.n: must be >= 1"));
    }
    let model = ctx.model(None)?;
    let path = match model {
        Model::Bump(m) => {
            let d = m.simulate(cfg.param_or("eta", 0.0), cfg.need("phi")?, cfg.param_or("theta", lo), n, seed)?;
            let p = ctx.path("data.csv");
            io::write_events(&p, &d)?;
            p
        }
        Model::NonNested(m) => {
            let eta = cfg.param_or("eta", m.direction.eta_null());
            let d = m.simulate(eta, cfg.need("phi")?, cfg.need("theta")?, n, seed)?;
            let p = ctx.path("data.csv");
            io::write_events(&p, &d)?;
            p
        }
        Model::Breakpoint(m) => {
            let d = m.simulate(
                cfg.need("phi1")?,
                cfg.need("phi2")?,
                cfg.param_or("xi", 0.0),
                cfg.param_or("theta", 0.5 * (lo + hi)),
                n as u64,
                seed,
            )?;
            let p = ctx.path("data.csv");
            io::write_grouped(&p, &d)?;
            p
        }
        Model::Synthetic(s) => {
            let bound = s.bind(&ctx.grid()?)?;
            let t = bound.trace(1, seed)?;
            let p = ctx.path("trace.csv");
            io::write_trace(&p, &t)?;
            p
        }
    };
    println!("seed {seed}");
    announce(&path);
    Ok(())
}

#[derive(Serialize)]
struct PointFit {
    theta: f64,
    stat: f64,
    eta: f64,
    nuisance: Vec<f64>,
    loglik: f64,
    degenerate: bool,
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct ScanSummary {
    c_R: f64,
    theta_hat: f64,
    family: ProcessFamily,
    nuisance_names: Vec<&'static str>,
    null: NullFit,
    degenerate_points: usize,
    fits: Vec<PointFit>,
    config_hash: String,
}

fn summarize(res: &ScanResult, family: ProcessFamily, names: Vec<&'static str>, hash: String) -> ScanSummary {
    let (c_r, theta_hat) = observed_max(family, &res.trace);
    ScanSummary {
        c_R: c_r,
        theta_hat,
        family,
        nuisance_names: names,
        null: res.null.clone(),
        degenerate_points: res.degenerate_points(),
        fits: res
            .fits
            .iter()
            .zip(res.trace.values())
            .map(|(f, &stat)| PointFit {
                theta: f.at,
                stat,
                eta: f.eta,
                nuisance: f.nuisance.clone(),
                loglik: f.loglik,
                degenerate: f.degenerate,
            })
            .collect(),
        config_hash: hash,
    }
}

pub fn scan_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let data = ctx.require_data()?;
    let grid = ctx.grid()?;
    let model = ctx.model(Some(&data))?;
    let hash = ctx.cfg.hash();
    let family = ctx.cfg.family();
    let summary = match (&model, &data) {
        (Model::Bump(m), Dataset::Events(d)) => summarize(&scan(m, d, &grid)?, family, m.nuisance_names(), hash),
        (Model::NonNested(m), Dataset::Events(d)) => summarize(&scan(m, d, &grid)?, family, m.nuisance_names(), hash),
        (Model::Breakpoint(m), Dataset::Grouped(d)) => summarize(&scan(m, d, &grid)?, family, m.nuisance_names(), hash),
        _ => unreachable!("dataset kind follows the model"),
    };
    let values: Vec<f64> = summary.fits.iter().map(|f| f.stat).collect();
    let trace = tohm::ProcessTrace::new(grid, values)?;
    let tp = ctx.path("trace.csv");
    io::write_trace(&tp, &trace)?;
    let sp = ctx.path("scan.json");
    io::write_json(&sp, &summary)?;
    println!("c_R = {:.3} at theta = {:.3}", summary.c_R, summary.theta_hat);
    if summary.degenerate_points > 0 {
        eprintln!("warning: {} grid points have a degenerate fit", summary.degenerate_points);
    }
    announce(&tp);
    announce(&sp);
    Ok(())
}

fn dump_traces(ctx: &Ctx, traces: &[tohm::ProcessTrace]) -> Result<(), CliError> {
    let dir = ctx.path("traces");
    for (r, t) in traces.iter().enumerate() {
        io::write_trace(&dir.join(format!("replicate_{r:05}.csv")), t)?;
    }
    println!("wrote {} traces to {}", traces.len(), dir.display());
    Ok(())
}

pub fn pvalue(ctx: &Ctx, dump: bool) -> Result<(), CliError> {
    let family = ctx.cfg.family();
    let trace_path = ctx
        .cfg
        .io
        .trace
        .clone()
        .ok_or_else(|| CliError::config("a trace is required: pass --trace or set io.trace"))?;
    let trace = io::read_trace(&trace_path)?;
    let (c_r, _) = observed_max(family, &trace);
    let (c0, e, se) = match &ctx.cfg.io.ensemble {
        Some(p) => {
            let s = io::read_ensemble_summary(p)?;
            ctx.refuse_c0_above(s.c0, c_r)?;
            (s.c0, s.e_upcrossings, s.mc_std_error)
        }
        None => {
            let c0 = ctx.cfg.c0_value()?;
            ctx.refuse_c0_above(c0, c_r)?;
            let data = ctx.data()?;
            let model = ctx.model(data.as_ref())?;
            let settings = ctx.settings(ctx.n_obs(data.as_ref()));
            let null = ctx.null_source(model, data.as_ref())?;
            let bound = null.bind(trace.grid())?;
            let ens = estimate_upcrossings(bound.as_ref(), c0, &settings, dump).map_err(CliError::ensemble)?;
            if !ens.failed_seeds.is_empty() {
                eprintln!("warning: {} replicates failed and were dropped", ens.failed_seeds.len());
            }
            let ep = ctx.path("ensemble.json");
            io::write_json(&ep, &ens.summary())?;
            announce(&ep);
            if dump {
                dump_traces(ctx, &ens.traces)?;
            }
            (c0, ens.e_upcrossings, ens.mc_std_error)
        }
    };
    if e == 0.0 {
        eprintln!(
            "warning: no upcrossings of c0 = {c0} in the ensemble; the p-value is the endpoint term only. \
             Increase n_replicates or lower c0"
        );
    }
    let mut report = BoundReport::from_trace(family, &trace, c0, e, se)?;
    report.config_hash = Some(ctx.cfg.hash());
    let rp = ctx.path("report.json");
    io::write_json(&rp, &report)?;
    println!("{}", report.summary());
    announce(&rp);
    Ok(())
}

fn null_for_config(ctx: &Ctx) -> Result<(Box<dyn NullSource>, EnsembleSettings), CliError> {
    let data = ctx.data()?;
    let model = ctx.model(data.as_ref())?;
    let settings = ctx.settings(ctx.n_obs(data.as_ref()));
    Ok((ctx.null_source(model, data.as_ref())?, settings))
}

pub fn upcross(ctx: &Ctx) -> Result<(), CliError> {
    let c0 = ctx.cfg.c0_value()?;
    let (null, settings) = null_for_config(ctx)?;
    let rs = ctx.cfg.resolutions.clone().unwrap_or_default();
    let rows = upcrossing_curve(null.as_ref(), c0, &rs, &settings).map_err(CliError::ensemble)?;
    let p = ctx.path("upcrossings.csv");
    io::write_rows(&p, &ElbowRow::HEADER, &rows)?;
    announce(&p);
    Ok(())
}

#[derive(Serialize)]
struct LadderRow {
    c0: f64,
    mean_upcrossings: f64,
}

pub fn sensitivity(ctx: &Ctx) -> Result<(), CliError> {
    let (null, settings) = null_for_config(ctx)?;
    let bound = null.bind(&ctx.grid()?)?;
    let s = c0_sensitivity(
        bound.as_ref(),
        ctx.cfg.n_paths,
        settings.n_obs,
        settings.master_seed,
        settings.execution,
        None,
    )
    .map_err(CliError::ensemble)?;
    let pp = ctx.path("paths.csv");
    io::write_paths(&pp, &s.paths)?;
    let lp = ctx.path("c0_ladder.csv");
    let rows: Vec<LadderRow> = s
        .ladder
        .iter()
        .map(|&(c0, m)| LadderRow { c0, mean_upcrossings: m })
        .collect();
    io::write_rows(&lp, &["c0", "mean_upcrossings"], &rows)?;
    println!("most upcrossings at c0 = {}", s.recommended_c0);
    if let Some(c) = suggest_c0(null.family()) {
        println!("a(c) peaks at c0 = {c}");
    }
    announce(&pp);
    announce(&lp);
    Ok(())
}

pub fn berman(ctx: &Ctx, dump_covariance: bool) -> Result<(), CliError> {
    let (null, settings) = null_for_config(ctx)?;
    let grid = ctx.grid()?;
    let cov = score_covariance(null.as_ref(), &grid, &settings).map_err(CliError::ensemble)?;
    let rows = berman_curve(&cov, &default_tau_ladder(&grid));
    if rows.is_empty() {
        eprintln!("warning: range narrower than 1.5, no separations to report");
    }
    let p = ctx.path("berman.csv");
    io::write_rows(&p, &BermanRow::HEADER, &rows)?;
    announce(&p);
    if dump_covariance {
        let cp = ctx.path("covariance.csv");
        io::write_covariance(&cp, &cov)?;
        announce(&cp);
    }
    Ok(())
}

pub fn compare(ctx: &Ctx) -> Result<(), CliError> {
    let c0 = ctx.cfg.c0_value()?;
    let (null, settings) = null_for_config(ctx)?;
    let rs = ctx.cfg.resolutions.clone().unwrap_or_default();
    let cs = ctx.cfg.thresholds.clone().unwrap_or_default();
    let rows = ratio_curve(null.as_ref(), &rs, &cs, c0, &settings).map_err(CliError::ensemble)?;
    let p = ctx.path("ratio.csv");
    io::write_rows(&p, &RatioRow::HEADER, &rows)?;
    announce(&p);
    Ok(())
}

#[derive(Serialize)]
struct BoundRow {
    c: f64,
    tohm_bound: f64,
    mc_err: f64,
}

pub fn oracle(ctx: &Ctx) -> Result<(), CliError> {
    let c0 = ctx.cfg.c0_value()?;
    let (null, settings) = null_for_config(ctx)?;
    let family = null.family();
    let bound = null.bind(&ctx.grid()?)?;
    let cs = ctx.cfg.thresholds.clone().unwrap_or_default();
    let set = simulate_traces(bound.as_ref(), &settings).map_err(CliError::ensemble)?;
    let rows: Vec<OracleRow> = threshold_stats(&set, family, &cs)
        .into_iter()
        .map(|s| OracleRow {
            c: s.c,
            p_hat: s.p_max_above,
            mc_err: s.se_p_max_above,
        })
        .collect();
    let at_c0 = threshold_stats(&set, family, &[c0])[0];
    let bounds: Vec<BoundRow> = cs
        .iter()
        .filter(|&&c| c >= c0)
        .map(|&c| {
            let b = tohm_bound(family, c, c0, at_c0.e_upcrossings, at_c0.se_upcrossings)?;
            Ok(BoundRow {
                c,
                tohm_bound: b.pvalue,
                mc_err: b.pvalue_mc_error,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let op = ctx.path("oracle.csv");
    io::write_rows(&op, &OracleRow::HEADER, &rows)?;
    let bp = ctx.path("bound.csv");
    io::write_rows(&bp, &["c", "tohm_bound", "mc_err"], &bounds)?;
    announce(&op);
    announce(&bp);
    Ok(())
}

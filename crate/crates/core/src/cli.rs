//! Command-line front end. A run is described by one JSON document
//! ([`RunConfig`]); every command writes its artifacts under `--out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{build_grid, grad_distance, DomainSpec, Grid};
use crate::io::{scalar_field_csv, vector_field_csv, write_json, write_text};
use crate::optimizer::{lambda_sweep, optimal_drift_solve, GridRule, OptimalResult, SolveOptions, SweepTable};
use crate::radial::radial_eigenpair;
use crate::verify::{
    barrier_check, gradient_alignment, maxima_location, monotonicity_suite, non_decreasing, non_increasing_rel,
    normal_profile, profile_error, sphere_min_monotonicity, BarrierOptions, CheckRecord, Status, VerificationReport,
};

#[derive(Parser, Debug)]
#[command(name = "drift-eigen", version, about = "Optimal-drift principal eigenvalue solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve for a single τ and write the fields.
    Solve(CommonArgs),
    /// Solve for every τ in the config and write the sweep table.
    Sweep(CommonArgs),
    /// Solve the τ list and run the configured checks.
    Verify(CommonArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweep rows (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Fixed resolution when `nodes_per_unit` is set, otherwise the τ-adaptive
/// `rule`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nodes_per_unit: Option<u32>,
    pub rule: GridRule,
}

impl GridConfig {
    pub fn rule(&self) -> GridRule {
        match self.nodes_per_unit {
            Some(n) => GridRule { base_nodes_per_unit: n, max_tau_h: f64::INFINITY },
            None => self.rule,
        }
    }

    pub fn grid(&self, spec: &DomainSpec, tau: f64) -> Result<Arc<Grid>> {
        Ok(Arc::new(build_grid(spec, self.rule().nodes_per_unit(tau))?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    MaximaLocation,
    ProfileError,
    GradientAlignment,
    GradientLowerBound,
    Barrier,
    SphereMin,
    NormalProfile,
    Monotonicity,
    RTau,
}

impl CheckKind {
    fn name(self) -> &'static str {
        match self {
            CheckKind::MaximaLocation => "maxima_location",
            CheckKind::ProfileError => "profile_error",
            CheckKind::GradientAlignment => "gradient_alignment",
            CheckKind::GradientLowerBound => "gradient_lower_bound",
            CheckKind::Barrier => "barrier",
            CheckKind::SphereMin => "sphere_min",
            CheckKind::NormalProfile => "normal_profile",
            CheckKind::Monotonicity => "monotonicity",
            CheckKind::RTau => "r_tau",
        }
    }
}

/// Pass/fail constants. Sup-type metrics pass at the largest τ when below
/// their threshold; lower bounds pass when above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub maxima_ratio: f64,
    pub maxima_trend_tol: f64,
    pub profile_error: f64,
    pub profile_trend_rel: f64,
    pub misalignment: f64,
    pub min_grad_over_tau: f64,
    pub normal_profile: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            maxima_ratio: 0.9,
            maxima_trend_tol: 0.02,
            profile_error: 0.2,
            profile_trend_rel: 0.1,
            misalignment: 0.15,
            min_grad_over_tau: 0.03,
            normal_profile: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub center: [f64; 2],
    pub r: f64,
    pub r_outer: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalProfileConfig {
    pub boundary_point: [f64; 2],
    #[serde(default = "default_profile_depth")]
    pub depth: f64,
    #[serde(default = "default_profile_samples")]
    pub samples: usize,
}

fn default_profile_depth() -> f64 {
    1.0
}

fn default_profile_samples() -> usize {
    11
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Empty means every check applicable to the domain and configuration.
    pub checks: Vec<CheckKind>,
    pub thresholds: Thresholds,
    pub gamma: f64,
    /// Boundary layer is `d < m / τ`.
    pub m: f64,
    pub skin: u32,
    pub barrier: BarrierOptions,
    pub sphere: Option<SphereConfig>,
    pub normal_profile: Option<NormalProfileConfig>,
    /// Cells of the radial reference solve used by `r_tau`.
    pub radial_nodes: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            checks: Vec::new(),
            thresholds: Thresholds::default(),
            gamma: 1.5,
            m: 3.0,
            skin: 2,
            barrier: BarrierOptions::default(),
            sphere: None,
            normal_profile: None,
            radial_nodes: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub grid: GridConfig,
    pub tau: Vec<f64>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// All module preconditions that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        self.domain.validate().map_err(|e| config_err(format!("domain: {e}")))?;
        self.solver.validate().map_err(|e| config_err(format!("solver: {e}")))?;
        if self.tau.is_empty() {
            return Err(config_err("tau: list must not be empty"));
        }
        if let Some(t) = self.tau.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(config_err(format!("tau: values must be finite and >= 0, got {t}")));
        }
        if self.tau.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("tau: list must be strictly increasing"));
        }
        match self.grid.nodes_per_unit {
            Some(0) => return Err(config_err("grid.nodes_per_unit: must be positive")),
            None if self.grid.rule.base_nodes_per_unit == 0 || !(self.grid.rule.max_tau_h > 0.0) => {
                return Err(config_err("grid.rule: base_nodes_per_unit and max_tau_h must be positive"));
            }
            _ => {}
        }
        let v = &self.verify;
        if !(v.gamma > 0.0) {
            return Err(config_err("verify.gamma: must be positive"));
        }
        if !(v.m > 0.0) {
            return Err(config_err("verify.m: must be positive"));
        }
        if v.skin == 0 {
            return Err(config_err("verify.skin: must be >= 1"));
        }
        if v.radial_nodes < 2 {
            return Err(config_err("verify.radial_nodes: must be >= 2"));
        }
        if v.checks.contains(&CheckKind::SphereMin) && v.sphere.is_none() {
            return Err(config_err("verify.sphere: required by the sphere_min check"));
        }
        if v.checks.contains(&CheckKind::NormalProfile) && v.normal_profile.is_none() {
            return Err(config_err("verify.normal_profile: required by the normal_profile check"));
        }
        if v.checks.contains(&CheckKind::RTau) && !matches!(self.domain, DomainSpec::Annulus { .. }) {
            return Err(config_err("verify.checks: r_tau applies to annulus domains only"));
        }
        Ok(())
    }

    /// Configured checks, or the default set for the domain.
    pub fn checks(&self) -> Vec<CheckKind> {
        if !self.verify.checks.is_empty() {
            let mut c = self.verify.checks.clone();
            c.sort();
            c.dedup();
            return c;
        }
        let mut c = vec![
            CheckKind::MaximaLocation,
            CheckKind::ProfileError,
            CheckKind::GradientAlignment,
            CheckKind::GradientLowerBound,
            CheckKind::Barrier,
            CheckKind::Monotonicity,
        ];
        if self.verify.sphere.is_some() {
            c.push(CheckKind::SphereMin);
        }
        if self.verify.normal_profile.is_some() {
            c.push(CheckKind::NormalProfile);
        }
        if matches!(self.domain, DomainSpec::Annulus { .. }) {
            c.push(CheckKind::RTau);
        }
        c.sort();
        c
    }
}

pub fn result_json(res: &OptimalResult) -> Value {
    let g = res.grid();
    let x = g.coords(res.x_tau);
    json!({
        "domain": g.spec(),
        "tau": res.tau,
        "h": res.h,
        "interior_nodes": g.interior_count(),
        "lambda": res.lambda,
        "x_tau": if g.dim() == 1 { json!([x[0]]) } else { json!(x) },
        "d_at_x_tau": res.d_at_x_tau,
        "nonlinear_residual": res.nonlinear_residual,
        "outer_iterations": res.outer_iterations,
        "lambda_trace": res.lambda_trace,
        "resolved": res.resolved,
    })
}

/// `phi.csv`, `drift.csv`, `distance.csv` and `result.json` under `out`.
pub fn write_solution(out: &Path, res: &OptimalResult) -> Result<()> {
    write_text(&out.join("phi.csv"), &scalar_field_csv(&res.phi))?;
    write_text(&out.join("drift.csv"), &vector_field_csv(&res.drift))?;
    write_text(&out.join("distance.csv"), &scalar_field_csv(&res.distance))?;
    write_json(&out.join("result.json"), &result_json(res))
}

fn out_dir(args: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<OptimalResult> {
    if cfg.tau.len() != 1 {
        return Err(config_err(format!("tau: solve takes exactly one value, got {}", cfg.tau.len())));
    }
    let tau = cfg.tau[0];
    let grid = cfg.grid.grid(&cfg.domain, tau)?;
    match optimal_drift_solve(&grid, tau, &cfg.solver) {
        Ok(res) => {
            write_solution(out, &res)?;
            Ok(res)
        }
        Err(e) => {
            if let Error::OuterNotConverged { iterations, residual, lambda_trace } = &e {
                write_json(
                    &out.join("trace.json"),
                    &json!({
                        "tau": tau,
                        "outer_iterations": iterations,
                        "nonlinear_residual": residual,
                        "lambda_trace": lambda_trace,
                    }),
                )?;
            }
            Err(e)
        }
    }
}

fn tau_file(tau: f64) -> String {
    format!("result_tau_{tau}.json")
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepTable> {
    let (table, results) = lambda_sweep(&cfg.domain, &cfg.tau, &cfg.solver, &cfg.grid.rule())?;
    write_text(&out.join("sweep.csv"), &table.to_csv())?;
    for res in results.iter().flatten() {
        write_json(&out.join(tau_file(res.tau)), &result_json(res))?;
    }
    Ok(table)
}

fn largest(results: &[OptimalResult]) -> &OptimalResult {
    results.last().expect("at least one solve")
}

fn taus(results: &[OptimalResult]) -> Vec<f64> {
    results.iter().map(|r| r.tau).collect()
}

fn record(kind: CheckKind, metric: f64, threshold: f64, ok: bool, results: &[OptimalResult]) -> CheckRecord {
    let last = largest(results);
    CheckRecord::new(kind.name(), metric, threshold, Status::from_pass(ok))
        .with_meta("tau", last.tau)
        .with_meta("h", last.h)
        .with_meta("domain", serde_json::to_value(last.grid().spec()).unwrap_or(Value::Null))
        .with_meta("taus", taus(results))
}

fn run_check(kind: CheckKind, cfg: &RunConfig, sweep: &SweepTable, results: &[OptimalResult]) -> Result<CheckRecord> {
    let v = &cfg.verify;
    let t = &v.thresholds;
    let last = largest(results);
    let rec = match kind {
        CheckKind::MaximaLocation => {
            let ratios = results
                .iter()
                .map(|r| maxima_location(r, &r.distance).map(|m| m.ratio))
                .collect::<Result<Vec<_>>>()?;
            let m = *ratios.last().unwrap();
            let ok = m >= t.maxima_ratio && non_decreasing(&ratios, t.maxima_trend_tol);
            record(kind, m, t.maxima_ratio, ok, results).with_meta("ratios", ratios)
        }
        CheckKind::ProfileError => {
            let positive: Vec<&OptimalResult> = results.iter().filter(|r| r.tau > 0.0).collect();
            let errs = positive
                .iter()
                .map(|r| profile_error(r, &r.distance, v.skin).map(|e| e.value))
                .collect::<Result<Vec<_>>>()?;
            let m = errs.last().copied().unwrap_or(f64::NAN);
            let ok = m <= t.profile_error && non_increasing_rel(&errs, t.profile_trend_rel);
            record(kind, m, t.profile_error, ok, results).with_meta("errors", errs)
        }
        CheckKind::GradientAlignment | CheckKind::GradientLowerBound => {
            if last.tau <= 0.0 {
                return Ok(record(kind, 0.0, 0.0, false, results)
                    .with_meta("note", "needs τ > 0")
                    .into_status(Status::RegimeNotReached));
            }
            let gd = grad_distance(&last.distance);
            let a = gradient_alignment(last, &last.distance, &gd, v.m, v.skin)?;
            if kind == CheckKind::GradientAlignment {
                let m = a.max_misalignment;
                record(kind, m, t.misalignment, m <= t.misalignment, results).with_meta("layer_nodes", a.nodes)
            } else {
                let m = a.min_grad_over_tau;
                record(kind, m, t.min_grad_over_tau, m >= t.min_grad_over_tau, results)
                    .with_meta("layer_nodes", a.nodes)
            }
        }
        CheckKind::Barrier => {
            let b = barrier_check(last, &last.distance, v.gamma, &v.barrier);
            record(kind, b.margin, v.barrier.tolerance, b.status == Status::Pass, results)
                .with_meta("gamma", v.gamma)
                .into_status(b.status)
        }
        CheckKind::SphereMin => {
            let s = v.sphere.as_ref().expect("validated");
            let x0 = last.grid().nearest_node(s.center);
            let c = sphere_min_monotonicity(last, x0, s.epsilon, (s.r, s.r_outer))?;
            let metric = if c.min_inner.is_finite() { c.min_outer - c.factor * c.min_inner } else { 0.0 };
            record(kind, metric, 0.0, c.status == Status::Pass, results)
                .with_meta("factor", c.factor)
                .into_status(c.status)
        }
        CheckKind::NormalProfile => {
            let p = v.normal_profile.as_ref().expect("validated");
            let np = normal_profile(last, &cfg.domain, p.boundary_point, p.depth, p.samples)?;
            let ok = np.max_diff <= t.normal_profile && !np.truncated;
            record(kind, np.max_diff, t.normal_profile, ok, results)
                .with_meta("truncated", np.truncated)
                .with_meta("samples", serde_json::to_value(&np.rows)?)
        }
        CheckKind::Monotonicity => {
            let rep = monotonicity_suite(sweep, None);
            let failed = rep.any_failed() || sweep.rows.iter().any(|r| !r.is_ok());
            let worst = rep.get("lambda_decreasing_in_tau").map_or(f64::NAN, |c| c.metric);
            let sub = serde_json::to_value(&rep)?;
            let rec = record(kind, worst, 1.0, !failed, results).with_meta("lambdas", sweep.lambdas());
            rec.with_meta("checks", sub)
        }
        CheckKind::RTau => {
            let DomainSpec::Annulus { inner, outer } = cfg.domain else {
                return Err(config_err("verify.checks: r_tau applies to annulus domains only"));
            };
            let mid = 0.5 * (inner + outer);
            let mut r_tau = Vec::new();
            let mut x_norm = Vec::new();
            for r in results {
                r_tau.push(radial_eigenpair(2, inner, outer, r.tau, v.radial_nodes)?.r_tau);
                let x = r.grid().coords(r.x_tau);
                x_norm.push(x[0].hypot(x[1]));
            }
            let ok = r_tau.iter().all(|&r| inner < r && r < mid);
            record(kind, *r_tau.last().unwrap(), mid, ok, results)
                .with_meta("r_tau", r_tau)
                .with_meta("abs_x_tau", x_norm)
        }
    };
    Ok(rec)
}

trait IntoStatus {
    fn into_status(self, status: Status) -> Self;
}

impl IntoStatus for CheckRecord {
    /// Replaces the status unless the metric was already marked non-finite.
    fn into_status(mut self, status: Status) -> Self {
        if self.meta.contains_key("note") && self.metric == f64::MAX {
            return self;
        }
        self.status = status;
        self.pass = status == Status::Pass;
        self
    }
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<VerificationReport> {
    let (sweep, results) = lambda_sweep(&cfg.domain, &cfg.tau, &cfg.solver, &cfg.grid.rule())?;
    let solved: Vec<OptimalResult> = results.into_iter().flatten().collect();
    let mut report = VerificationReport::default();
    for kind in cfg.checks() {
        let rec = if solved.len() != cfg.tau.len() {
            CheckRecord::new(kind.name(), f64::NAN, f64::NAN, Status::Fail)
                .with_meta("error", "one or more solves failed; see sweep.csv")
        } else {
            run_check(kind, cfg, &sweep, &solved).unwrap_or_else(|e| {
                CheckRecord::new(kind.name(), f64::NAN, f64::NAN, Status::Fail).with_meta("error", e.to_string())
            })
        };
        log::info!("{}: {:?} (metric {:.4e})", rec.check, rec.status, rec.metric);
        report.push(rec)?;
    }
    write_text(&out.join("sweep.csv"), &sweep.to_csv())?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Runs the parsed command; the returned code is the process exit status.
pub fn run(cli: Cli) -> i32 {
    let args = match &cli.command {
        Command::Solve(a) | Command::Sweep(a) | Command::Verify(a) => a,
    };
    if let Some(k) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let out = out_dir(args, &cfg);
    let outcome = match &cli.command {
        Command::Solve(_) => cmd_solve(&cfg, &out).map(|r| {
            println!("lambda = {}", crate::io::fmt_f64(r.lambda));
            0
        }),
        Command::Sweep(_) => cmd_sweep(&cfg, &out).map(|t| {
            let failed = t.rows.iter().filter(|r| !r.is_ok()).count();
            println!("{} rows, {failed} failed", t.rows.len());
            i32::from(failed > 0)
        }),
        Command::Verify(_) => cmd_verify(&cfg, &out).map(|rep| {
            let summary: BTreeMap<&str, Status> = rep.checks.iter().map(|c| (c.check.as_str(), c.status)).collect();
            for (name, status) in &summary {
                println!("{name}: {}", serde_json::to_value(status).unwrap_or(Value::Null));
            }
            i32::from(rep.any_failed())
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

//! Optimal drift: `λ(τ) = inf { λ_v : |v| <= τ }` by alternating a frozen-drift
//! eigen-solve with a drift update.
//!
//! The update is a discrete policy improvement. With `φ` the current
//! eigenvector, each interior node picks the drift minimising its own row
//! `(A_v φ)_i`. Rows are independent, so the new matrix satisfies
//! `A_new φ <= λ φ` componentwise and the Collatz-Wielandt bound gives
//! `λ_new <= λ`: the λ-trace is non-increasing by construction. At a fixed
//! point the row minimum is the discrete `-Δφ - τ|∇φ|`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_grid, distance_field, DomainSpec, Grid, NodeId, ScalarField, VectorField};
use crate::linalg::inverse_iteration;
use crate::operator::{assemble_with, pair_from_deficit, BoundaryScheme, Discretization};
use crate::verify;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative to the largest central gradient; below it a node's central
    /// gradient is treated as zero.
    pub grad_floor: f64,
    /// Boundary-layer resolution limit on `τ h`.
    pub max_tau_h: f64,
    pub scheme: Discretization,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            outer_tol: 1e-8,
            inner_tol: 1e-10,
            max_outer: 200,
            max_inner: 500,
            grad_floor: 1e-22,
            max_tau_h: 0.2,
            scheme: Discretization::default(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outer_tol > 0.0
            && self.inner_tol > 0.0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.grad_floor >= 0.0
            && self.max_tau_h > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("solve options must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimalResult {
    pub tau: f64,
    pub lambda: f64,
    pub phi: ScalarField,
    /// `1 - phi` on interior nodes, at full relative accuracy.
    pub deficit: Vec<f64>,
    pub drift: VectorField,
    pub distance: ScalarField,
    pub lambda_trace: Vec<f64>,
    pub nonlinear_residual: f64,
    pub outer_iterations: usize,
    pub x_tau: NodeId,
    pub d_at_x_tau: f64,
    /// `τ h` within the resolution limit.
    pub resolved: bool,
    pub h: f64,
}

impl OptimalResult {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.phi.grid
    }

    /// Fraction of interior nodes with `|v| = τ` to relative `tol`.
    pub fn saturation(&self, tol: f64) -> f64 {
        let g = self.grid();
        let n = g.interior_count();
        let hits = g
            .interior_nodes()
            .iter()
            .filter(|&&id| (self.drift.magnitude(id) - self.tau).abs() <= tol * self.tau.max(1e-300))
            .count();
        hits as f64 / n as f64
    }

    /// λ-trace is non-increasing up to `tol` relative.
    pub fn trace_monotone(&self, tol: f64) -> bool {
        self.lambda_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
    }
}

/// Drift `-τ g/|g|` from central differences of `phi` (one-sided next to
/// the boundary); zero where `|g| <= grad_floor`.
pub fn drift_update(phi: &ScalarField, tau: f64, grad_floor: f64) -> VectorField {
    let grid = &phi.grid;
    let mut v = VectorField::zeros(grid.clone(), "drift");
    for &id in grid.interior_nodes() {
        let mut g = [0.0; 2];
        for (axis, ga) in g.iter_mut().enumerate().take(grid.dim()) {
            let side = |backward: bool| {
                grid.neighbor(id, axis, backward)
                    .filter(|&nb| grid.is_interior(nb))
            };
            let h = grid.h();
            *ga = match (side(true), side(false)) {
                (Some(b), Some(f)) => (phi.values[f] - phi.values[b]) / (2.0 * h),
                (None, Some(f)) => (phi.values[f] - phi.values[id]) / h,
                (Some(b), None) => (phi.values[id] - phi.values[b]) / h,
                (None, None) => 0.0,
            };
        }
        let m = g[0].hypot(g[1]);
        if m > grad_floor && m > 0.0 {
            v.values[id] = [-tau * (g[0] / m), -tau * (g[1] / m)];
        }
    }
    v
}

/// Local stencil data of one interior node: per axis the arm lengths and
/// the deficit differences `psi_nb - psi_i` (Dirichlet neighbours have
/// `psi = 1`).
#[derive(Clone, Copy)]
struct Row {
    arms: [[f64; 2]; 2],
    diff: [[f64; 2]; 2],
}

impl Row {
    fn value(&self, scheme: &Discretization, dim: usize, v: [f64; 2]) -> f64 {
        (0..dim)
            .map(|a| {
                let (cb, cf) = scheme.couplings(v[a], self.arms[a][0], self.arms[a][1]);
                cb * self.diff[a][0] + cf * self.diff[a][1]
            })
            .sum()
    }

    fn central_grad(&self, dim: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..dim {
            // phi = 1 - psi
            g[a] = -(self.diff[a][1] - self.diff[a][0]) / (self.arms[a][0] + self.arms[a][1]);
        }
        g
    }
}

fn rows(grid: &Grid, deficit: &[f64], scheme: &Discretization) -> Vec<Row> {
    let h = grid.h();
    grid.interior_nodes()
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let arms = grid.arms(k);
            let mut row = Row { arms: [[h; 2]; 2], diff: [[0.0; 2]; 2] };
            for a in 0..grid.dim() {
                if scheme.boundary == BoundaryScheme::Cut {
                    row.arms[a] = [arms[2 * a], arms[2 * a + 1]];
                }
                for (s, backward) in [(0, true), (1, false)] {
                    let psi = grid
                        .neighbor(id, a, backward)
                        .and_then(|nb| grid.interior_index(nb))
                        .map_or(1.0, |j| deficit[j]);
                    row.diff[a][s] = psi - deficit[k];
                }
            }
            row
        })
        .collect()
}

const ANGLES: usize = 16;

/// Best drift for one row and the improvement `F(best) - F(current) <= 0`.
fn improve_row(
    row: &Row,
    scheme: &Discretization,
    dim: usize,
    tau: f64,
    current: [f64; 2],
    gradient_ok: bool,
) -> ([f64; 2], f64) {
    let f = |v: [f64; 2]| row.value(scheme, dim, v);
    let f_cur = f(current);
    let mut best = (current, f_cur);
    let mut consider = |v: [f64; 2], fv: f64| {
        if fv < best.1 {
            best = (v, fv);
        }
    };
    consider([0.0; 2], f([0.0; 2]));
    if tau == 0.0 {
        return (best.0, best.1 - f_cur);
    }
    if dim == 1 {
        for s in [-tau, tau] {
            consider([s, 0.0], f([s, 0.0]));
        }
        return (best.0, best.1 - f_cur);
    }
    if gradient_ok {
        let g = row.central_grad(dim);
        let m = g[0].hypot(g[1]);
        if m > 0.0 {
            let v = [-tau * (g[0] / m), -tau * (g[1] / m)];
            consider(v, f(v));
        }
    }
    let on_circle = |t: f64| [tau * t.cos(), tau * t.sin()];
    let step = std::f64::consts::TAU / ANGLES as f64;
    let (mut t_best, mut f_best) = (0.0, f64::INFINITY);
    for i in 0..ANGLES {
        let t = i as f64 * step;
        let ft = f(on_circle(t));
        if ft < f_best {
            t_best = t;
            f_best = ft;
        }
    }
    // golden-section refinement on the bracketing arc
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (t_best - step, t_best + step);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(on_circle(c)), f(on_circle(d)));
    for _ in 0..32 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(on_circle(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(on_circle(d));
        }
    }
    for (t, ft) in [(t_best, f_best), (c, fc), (d, fd)] {
        consider(on_circle(t), ft);
    }
    (best.0, best.1 - f_cur)
}

pub fn optimal_drift_solve(grid: &Arc<Grid>, tau: f64, opts: &SolveOptions) -> Result<OptimalResult> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidDomain(format!("drift bound must be a finite τ >= 0, got {tau}")));
    }
    opts.validate()?;
    let h = grid.h();
    let resolved = tau * h <= opts.max_tau_h * (1.0 + 1e-12);
    if !resolved {
        log::warn!(
            "boundary layer unresolved: tau*h = {:.3} exceeds {:.3}",
            tau * h,
            opts.max_tau_h
        );
    }
    let dim = grid.dim();
    let scheme = opts.scheme;
    let mut v = VectorField::zeros(grid.clone(), "drift");
    let mut start: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut nl = f64::INFINITY;

    for k in 1..=opts.max_outer {
        let a = assemble_with(grid, &v, scheme)?;
        let lu = a.factor()?;
        let it = inverse_iteration(a.matrix(), &lu, start.as_deref(), opts.inner_tol, opts.max_inner)?;
        let lambda = it.lambda;
        trace.push(lambda);

        let rs = rows(grid, &it.deficit, &scheme);
        let gmax = rs
            .par_iter()
            .map(|r| {
                let g = r.central_grad(dim);
                g[0].hypot(g[1])
            })
            .reduce(|| 0.0, f64::max);
        let floor = opts.grad_floor * gmax;
        let nodes = grid.interior_nodes();
        let updates: Vec<([f64; 2], f64)> = rs
            .par_iter()
            .zip(nodes.par_iter())
            .map(|(r, &id)| {
                let g = r.central_grad(dim);
                improve_row(r, &scheme, dim, tau, v.values[id], g[0].hypot(g[1]) > floor)
            })
            .collect();
        nl = it
            .residual_vec
            .iter()
            .zip(&updates)
            .map(|(r, (_, gap))| (r + gap).abs())
            .fold(0.0, f64::max);
        log::debug!("outer {k}: lambda = {lambda:.12e}, residual = {nl:.3e}");

        let settled = k > 1 && {
            let prev = trace[trace.len() - 2];
            (lambda - prev).abs() <= opts.outer_tol * lambda
        };
        if settled && nl <= opts.outer_tol {
            let pair = pair_from_deficit(&a, lambda, it.deficit, it.iterations, it.residual);
            let distance = distance_field(grid)?;
            let x_tau = argmax_node(grid, &pair.deficit);
            return Ok(OptimalResult {
                tau,
                lambda,
                d_at_x_tau: distance.values[x_tau],
                phi: pair.phi,
                deficit: pair.deficit,
                drift: v,
                distance,
                lambda_trace: trace,
                nonlinear_residual: nl,
                outer_iterations: k,
                x_tau,
                resolved,
                h,
            });
        }
        for (&id, (nv, _)) in nodes.iter().zip(&updates) {
            v.values[id] = *nv;
        }
        start = Some(it.deficit);
    }
    Err(Error::OuterNotConverged {
        iterations: opts.max_outer,
        residual: nl,
        lambda_trace: trace,
    })
}

/// Node of largest `phi`; the lowest id among ties.
fn argmax_node(grid: &Grid, deficit: &[f64]) -> NodeId {
    let mut best = 0;
    for (k, &p) in deficit.iter().enumerate() {
        if p < deficit[best] {
            best = k;
        }
    }
    grid.interior_nodes()[best]
}

/// Grid resolution as a function of τ: `max(base, ceil(τ / max_tau_h))`
/// nodes per unit length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridRule {
    pub base_nodes_per_unit: u32,
    pub max_tau_h: f64,
}

impl Default for GridRule {
    fn default() -> Self {
        GridRule { base_nodes_per_unit: 64, max_tau_h: 0.2 }
    }
}

impl GridRule {
    pub fn nodes_per_unit(&self, tau: f64) -> u32 {
        let need = (tau / self.max_tau_h * (1.0 - 1e-12)).ceil();
        self.base_nodes_per_unit.max(need as u32)
    }

    pub fn grid(&self, spec: &DomainSpec, tau: f64) -> Result<Arc<Grid>> {
        Ok(Arc::new(build_grid(spec, self.nodes_per_unit(tau))?))
    }
}

/// Summary metrics used by the sweep table.
pub const SWEEP_SKIN: u32 = 2;
pub const SWEEP_LAYER_M: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub h: f64,
    pub lambda: f64,
    pub ln_lambda: f64,
    pub ln_lambda_over_minus_tau_r: f64,
    pub d_x_tau: f64,
    pub r: f64,
    pub profile_err: f64,
    pub align_err: f64,
    pub min_grad_over_tau: f64,
    pub outer_iters: usize,
    pub residual: f64,
    /// `ok`, `unresolved` or `failed: <reason>`.
    pub status: String,
}

impl SweepRow {
    fn failed(tau: f64, h: f64, r: f64, err: &Error) -> SweepRow {
        SweepRow {
            tau,
            h,
            lambda: f64::NAN,
            ln_lambda: f64::NAN,
            ln_lambda_over_minus_tau_r: f64::NAN,
            d_x_tau: f64::NAN,
            r,
            profile_err: f64::NAN,
            align_err: f64::NAN,
            min_grad_over_tau: f64::NAN,
            outer_iters: 0,
            residual: f64::NAN,
            status: format!("failed: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        !self.status.starts_with("failed")
    }

    pub fn from_result(res: &OptimalResult, r: f64) -> SweepRow {
        let prof = verify::profile_error(res, &res.distance, SWEEP_SKIN)
            .map(|p| p.value)
            .unwrap_or(f64::NAN);
        let (align, ming) = if res.tau > 0.0 {
            let gd = crate::geometry::grad_distance(&res.distance);
            match verify::gradient_alignment(res, &res.distance, &gd, SWEEP_LAYER_M, SWEEP_SKIN) {
                Ok(a) => (a.max_misalignment, a.min_grad_over_tau),
                Err(_) => (f64::NAN, f64::NAN),
            }
        } else {
            (f64::NAN, f64::NAN)
        };
        let ln = res.lambda.ln();
        SweepRow {
            tau: res.tau,
            h: res.h,
            lambda: res.lambda,
            ln_lambda: ln,
            ln_lambda_over_minus_tau_r: if res.tau > 0.0 { ln / (-res.tau * r) } else { f64::NAN },
            d_x_tau: res.d_at_x_tau,
            r,
            profile_err: prof,
            align_err: align,
            min_grad_over_tau: ming,
            outer_iters: res.outer_iterations,
            residual: res.nonlinear_residual,
            status: if res.resolved { "ok".into() } else { "unresolved".into() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "tau",
    "h",
    "lambda",
    "ln_lambda",
    "ln_lambda_over_minus_tauR",
    "d_x_tau",
    "R",
    "profile_err",
    "align_err",
    "min_grad_over_tau",
    "outer_iters",
    "residual",
    "status",
];

impl SweepTable {
    pub fn lambdas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = SWEEP_COLUMNS.join(",");
        s.push('\n');
        let f = crate::io::fmt_f64;
        for r in &self.rows {
            let cells = [
                f(r.tau),
                f(r.h),
                f(r.lambda),
                f(r.ln_lambda),
                f(r.ln_lambda_over_minus_tau_r),
                f(r.d_x_tau),
                f(r.r),
                f(r.profile_err),
                f(r.align_err),
                f(r.min_grad_over_tau),
                r.outer_iters.to_string(),
                f(r.residual),
                crate::io::csv_text(&r.status),
            ];
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// One solve per τ (in parallel, output in input order). Failed solves
/// become rows with a `failed` status.
pub fn lambda_sweep(
    spec: &DomainSpec,
    taus: &[f64],
    opts: &SolveOptions,
    rule: &GridRule,
) -> Result<(SweepTable, Vec<Option<OptimalResult>>)> {
    spec.validate()?;
    if taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("τ values must be >= 0".into()));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("τ list must be strictly increasing".into()));
    }
    let r_exact = spec.inradius();
    let out: Vec<(SweepRow, Option<OptimalResult>)> = taus
        .par_iter()
        .map(|&tau| {
            let grid = match rule.grid(spec, tau) {
                Ok(g) => g,
                Err(e) => {
                    let h = 1.0 / rule.nodes_per_unit(tau) as f64;
                    return (SweepRow::failed(tau, h, r_exact.unwrap_or(f64::NAN), &e), None);
                }
            };
            match optimal_drift_solve(&grid, tau, opts) {
                Ok(res) => {
                    let r = r_exact.unwrap_or_else(|| {
                        res.distance.interior_values().into_iter().fold(0.0, f64::max)
                    });
                    (SweepRow::from_result(&res, r), Some(res))
                }
                Err(e) => {
                    log::warn!("sweep row τ = {tau} failed: {e}");
                    (SweepRow::failed(tau, grid.h(), r_exact.unwrap_or(f64::NAN), &e), None)
                }
            }
        })
        .collect();
    let (rows, results) = out.into_iter().unzip();
    Ok((SweepTable { rows }, results))
}

//! Numerical diagnostics for the large-drift limit, and the
//! machine-readable report they are collected into.
//!
//! Each diagnostic has a field-level form taking `(phi, τ, d)` so that
//! synthetic profiles can be checked, and a thin wrapper taking an
//! [`OptimalResult`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{inradius_and_argmax, DomainSpec, NodeId, ScalarField, VectorField};
use crate::optimizer::{OptimalResult, SweepTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "regime not reached")]
    RegimeNotReached,
    #[serde(rename = "hypothesis unmet")]
    HypothesisUnmet,
    #[serde(rename = "not strict")]
    NotStrict,
}

impl Status {
    pub fn from_pass(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// Statuses that make a report fail. Unmet preconditions do not.
    pub fn is_failure(self) -> bool {
        matches!(self, Status::Fail | Status::NotStrict)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
    pub status: Status,
    pub meta: BTreeMap<String, Value>,
}

impl CheckRecord {
    /// Non-finite metrics are recorded as failures with `metric = f64::MAX`.
    pub fn new(check: &str, metric: f64, threshold: f64, status: Status) -> CheckRecord {
        let mut meta = BTreeMap::new();
        let (metric, status) = if metric.is_finite() {
            (metric, status)
        } else {
            meta.insert("note".into(), Value::from(format!("metric not finite: {metric}")));
            (f64::MAX, Status::Fail)
        };
        CheckRecord {
            check: check.to_string(),
            metric,
            threshold,
            pass: status == Status::Pass,
            status,
            meta,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> CheckRecord {
        self.meta.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerificationReport {
    pub checks: Vec<CheckRecord>,
}

impl VerificationReport {
    /// Adds a record; a check name may appear only once.
    pub fn push(&mut self, record: CheckRecord) -> Result<()> {
        if self.get(&record.check).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate check '{}'", record.check)));
        }
        self.checks.push(record);
        Ok(())
    }

    pub fn get(&self, check: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.check == check)
    }

    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.status.is_failure())
    }

    pub fn merge(&mut self, other: VerificationReport) -> Result<()> {
        for c in other.checks {
            self.push(c)?;
        }
        Ok(())
    }
}

/// Value of a sup/inf-type metric and the node attaining it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremum {
    pub value: f64,
    pub node: NodeId,
}

fn layers_beyond(phi: &ScalarField, skin: u32) -> Vec<NodeId> {
    let g = &phi.grid;
    let layer = g.boundary_graph_distance();
    g.interior_nodes().iter().copied().filter(|&id| layer[id] > skin).collect()
}

fn inradius(spec: &DomainSpec, d: &ScalarField) -> f64 {
    spec.inradius()
        .unwrap_or_else(|| d.interior_values().into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaximaLocation {
    /// `d(x_τ) / R`.
    pub ratio: f64,
    pub d_x_tau: f64,
    pub inradius: f64,
    /// Euclidean distance from `x_τ` to the nearest node maximising `d`.
    pub distance_to_argmax: f64,
}

pub fn maxima_location(res: &OptimalResult, d: &ScalarField) -> Result<MaximaLocation> {
    let g = res.grid();
    let r = inradius(g.spec(), d);
    let (_, arg) = inradius_and_argmax(d, 0.5 * g.h())?;
    let x = g.coords(res.x_tau);
    let dist = arg
        .iter()
        .map(|&id| {
            let p = g.coords(id);
            (p[0] - x[0]).hypot(p[1] - x[1])
        })
        .fold(f64::INFINITY, f64::min);
    let dx = d.values[res.x_tau];
    Ok(MaximaLocation {
        ratio: (dx / r).clamp(0.0, 1.0),
        d_x_tau: dx,
        inradius: r,
        distance_to_argmax: dist,
    })
}

/// `sup |phi / (1 - exp(-τ d)) - 1|` over interior nodes more than `skin`
/// layers from the boundary.
pub fn profile_error_field(phi: &ScalarField, tau: f64, d: &ScalarField, skin: u32) -> Result<Extremum> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("profile error needs τ > 0".into()));
    }
    if skin == 0 {
        return Err(Error::InvalidArgument("skin must be at least 1".into()));
    }
    let mut best = Extremum { value: f64::NEG_INFINITY, node: 0 };
    for id in layers_beyond(phi, skin) {
        let e = (phi.values[id] / -(-tau * d.values[id]).exp_m1() - 1.0).abs();
        if e > best.value {
            best = Extremum { value: e, node: id };
        }
    }
    if best.value.is_finite() {
        Ok(best)
    } else {
        Err(Error::LayerUnresolved(format!("no nodes beyond a skin of {skin} layers")))
    }
}

pub fn profile_error(res: &OptimalResult, d: &ScalarField, skin: u32) -> Result<Extremum> {
    profile_error_field(&res.phi, res.tau, d, skin)
}

fn field_gradient(f: &ScalarField, id: NodeId) -> [f64; 2] {
    let g = &f.grid;
    let h = g.h();
    let mut out = [0.0; 2];
    for (a, o) in out.iter_mut().enumerate().take(g.dim()) {
        let at = |backward| g.neighbor(id, a, backward).map_or(0.0, |nb| f.values[nb]);
        *o = (at(false) - at(true)) / (2.0 * h);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub min_grad_over_tau: f64,
    pub max_misalignment: f64,
    pub argmin_grad: NodeId,
    pub argmax_misalignment: NodeId,
    pub nodes: usize,
}

/// Gradient size and direction of `phi` in the layer `d < M/τ`, excluding
/// `skin` boundary layers and ridge nodes of `grad_d`.
pub fn gradient_alignment_field(
    phi: &ScalarField,
    tau: f64,
    d: &ScalarField,
    grad_d: &VectorField,
    m: f64,
    skin: u32,
) -> Result<Alignment> {
    if !(tau > 0.0) || !(m > 0.0) {
        return Err(Error::InvalidArgument("alignment needs τ > 0 and M > 0".into()));
    }
    let delta = m / tau;
    let h = phi.grid.h();
    if delta < 2.0 * h {
        return Err(Error::LayerUnresolved(format!(
            "layer width M/τ = {delta:.3e} is below two cells (h = {h:.3e})"
        )));
    }
    let mut out = Alignment {
        min_grad_over_tau: f64::INFINITY,
        max_misalignment: f64::NEG_INFINITY,
        argmin_grad: 0,
        argmax_misalignment: 0,
        nodes: 0,
    };
    for id in layers_beyond(phi, skin) {
        if d.values[id] >= delta || !grad_d.is_valid(id) {
            continue;
        }
        out.nodes += 1;
        let g = field_gradient(phi, id);
        let n = g[0].hypot(g[1]);
        if n / tau < out.min_grad_over_tau {
            out.min_grad_over_tau = n / tau;
            out.argmin_grad = id;
        }
        let gd = grad_d.values[id];
        let u = if n > 0.0 { [g[0] / n, g[1] / n] } else { [0.0, 0.0] };
        let mis = (u[0] - gd[0]).hypot(u[1] - gd[1]);
        if mis > out.max_misalignment {
            out.max_misalignment = mis;
            out.argmax_misalignment = id;
        }
    }
    if out.nodes == 0 {
        return Err(Error::LayerUnresolved("boundary layer is empty after masking".into()));
    }
    Ok(out)
}

pub fn gradient_alignment(
    res: &OptimalResult,
    d: &ScalarField,
    grad_d: &VectorField,
    m: f64,
    skin: u32,
) -> Result<Alignment> {
    gradient_alignment_field(&res.phi, res.tau, d, grad_d, m, skin)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierOptions {
    /// Below this τ the asymptotic regime is not assumed.
    pub min_tau: f64,
    /// Pass iff `margin <= tolerance`.
    pub tolerance: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions { min_tau: 10.0, tolerance: 0.02 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierCheck {
    pub margin: f64,
    pub node: NodeId,
    pub status: Status,
}

/// `max (phi - (1 - e^{-γτd}) / (1 - e^{-τR/γ}))` over interior nodes.
pub fn barrier_margin_field(phi: &ScalarField, tau: f64, d: &ScalarField, gamma: f64, r: f64) -> Extremum {
    let denom = -(-tau * r / gamma).exp_m1();
    let mut best = Extremum { value: f64::NEG_INFINITY, node: 0 };
    for &id in phi.grid.interior_nodes() {
        let bound = -(-gamma * tau * d.values[id]).exp_m1() / denom;
        let m = phi.values[id] - bound;
        if m > best.value {
            best = Extremum { value: m, node: id };
        }
    }
    best
}

pub fn barrier_check(res: &OptimalResult, d: &ScalarField, gamma: f64, opts: &BarrierOptions) -> BarrierCheck {
    let r = inradius(res.grid().spec(), d);
    let m = barrier_margin_field(&res.phi, res.tau, d, gamma, r);
    let status = if gamma <= 1.0 || res.tau < opts.min_tau {
        Status::RegimeNotReached
    } else {
        Status::from_pass(m.value <= opts.tolerance)
    };
    BarrierCheck { margin: m.value, node: m.node, status }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereCheck {
    pub status: Status,
    pub min_inner: f64,
    pub min_outer: f64,
    /// `(1 - ε r') / (1 - ε r)`.
    pub factor: f64,
}

fn shell_min(res: &OptimalResult, x0: NodeId, r: f64) -> Result<f64> {
    let g = res.grid();
    let c = g.coords(x0);
    let h = g.h();
    let mut m = f64::INFINITY;
    for (k, &id) in g.interior_nodes().iter().enumerate() {
        let p = g.coords(id);
        if ((p[0] - c[0]).hypot(p[1] - c[1]) - r).abs() <= 0.5 * h {
            m = m.min(1.0 - res.deficit[k]);
        }
    }
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::InvalidArgument(format!("shell of radius {r} contains no nodes")))
    }
}

/// Checks `min_{|x-x0|=r'} phi >= (1-εr')/(1-εr) min_{|x-x0|=r} phi` on node
/// shells of half-width `h/2`.
pub fn sphere_min_monotonicity(
    res: &OptimalResult,
    x0: NodeId,
    eps: f64,
    radii: (f64, f64),
) -> Result<SphereCheck> {
    let (r, r1) = radii;
    let g = res.grid();
    if !g.is_interior(x0) {
        return Err(Error::InvalidArgument("centre is not an interior node".into()));
    }
    if !(0.0 < r && r <= r1) {
        return Err(Error::InvalidArgument(format!("radii must satisfy 0 < r <= r', got {r}, {r1}")));
    }
    if res.distance.values[x0] < r1 {
        return Err(Error::InvalidArgument(format!(
            "ball of radius {r1} leaves the domain (d(x0) = {})",
            res.distance.values[x0]
        )));
    }
    if !(eps > 0.0 && eps * r1 < 1.0) {
        return Err(Error::InvalidArgument(format!("ε must lie in (0, 1/r'), got {eps}")));
    }
    let factor = (1.0 - eps * r1) / (1.0 - eps * r);
    let n = g.dim() as f64;
    if 2.0 * (n - 1.0) / res.tau.max(f64::MIN_POSITIVE) > r {
        return Ok(SphereCheck {
            status: Status::HypothesisUnmet,
            min_inner: f64::NAN,
            min_outer: f64::NAN,
            factor,
        });
    }
    let min_inner = shell_min(res, x0, r)?;
    let min_outer = shell_min(res, x0, r1)?;
    let ok = min_outer >= factor * min_inner * (1.0 - 4.0 * f64::EPSILON);
    Ok(SphereCheck { status: Status::from_pass(ok), min_inner, min_outer, factor })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub t: f64,
    pub phi: f64,
    pub exact: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalProfile {
    pub rows: Vec<ProfileSample>,
    pub max_diff: f64,
    pub truncated: bool,
}

/// Samples `phi(y - (t/τ) ν(y))` for `t` in `[0, depth]` against `1 - e^{-t}`.
pub fn normal_profile(
    res: &OptimalResult,
    spec: &DomainSpec,
    y: [f64; 2],
    depth: f64,
    samples: usize,
) -> Result<NormalProfile> {
    if !spec.is_primitive() {
        return Err(Error::NoClosedForm);
    }
    if spec.depth(y).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{y:?} is not on the boundary")));
    }
    if !(res.tau > 0.0) || !(depth >= 0.0) || samples < 2 {
        return Err(Error::InvalidArgument("normal profile needs τ > 0, depth >= 0, samples >= 2".into()));
    }
    let nu = spec.outward_normal(y)?;
    let mut rows = Vec::with_capacity(samples);
    let mut truncated = false;
    for i in 0..samples {
        let t = depth * i as f64 / (samples - 1) as f64;
        let s = t / res.tau;
        let p = [y[0] - s * nu[0], y[1] - s * nu[1]];
        if t > 0.0 && spec.depth(p) <= 0.0 {
            truncated = true;
            break;
        }
        let phi = if t == 0.0 { 0.0 } else { res.phi.sample(p) };
        let exact = -(-t).exp_m1();
        rows.push(ProfileSample { t, phi, exact, diff: phi - exact });
    }
    let max_diff = rows.iter().map(|r| r.diff.abs()).fold(0.0, f64::max);
    Ok(NormalProfile { rows, max_diff, truncated })
}

/// Every consecutive pair satisfies `v[k+1] >= v[k] - tol`.
pub fn non_decreasing(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Every consecutive pair satisfies `v[k+1] <= v[k] (1 + rel)`.
pub fn non_increasing_rel(values: &[f64], rel: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel))
}

/// Strict decrease of λ in τ, positivity, and optionally strict decrease
/// under domain inclusion (`nested` is the larger domain).
pub fn monotonicity_suite(sweep: &SweepTable, nested: Option<&SweepTable>) -> VerificationReport {
    let mut report = VerificationReport::default();
    let ok: Vec<_> = sweep.rows.iter().filter(|r| r.is_ok()).collect();
    let worst = ok
        .windows(2)
        .map(|w| w[1].lambda / w[0].lambda)
        .fold(0.0, f64::max);
    let decreasing = ok.windows(2).all(|w| w[1].lambda < w[0].lambda);
    report.checks.push(
        CheckRecord::new("lambda_decreasing_in_tau", worst, 1.0, Status::from_pass(decreasing))
            .with_meta("rows", ok.len())
            .with_meta("taus", ok.iter().map(|r| r.tau).collect::<Vec<_>>()),
    );
    let min_lambda = ok.iter().map(|r| r.lambda).fold(f64::INFINITY, f64::min);
    report.checks.push(CheckRecord::new(
        "lambda_positive",
        if ok.is_empty() { 0.0 } else { min_lambda },
        0.0,
        Status::from_pass(!ok.is_empty() && min_lambda > 0.0),
    ));
    if let Some(large) = nested {
        let mut worst = 0.0f64;
        let mut status = Status::Pass;
        let mut shared = 0;
        for small in &ok {
            let Some(big) = large.rows.iter().find(|r| r.is_ok() && r.tau == small.tau) else {
                continue;
            };
            shared += 1;
            let ratio = big.lambda / small.lambda;
            worst = worst.max(ratio);
            if ratio > 1.0 {
                status = Status::Fail;
            } else if ratio == 1.0 && status == Status::Pass {
                status = Status::NotStrict;
            }
        }
        if shared == 0 {
            status = Status::Fail;
        }
        report.checks.push(
            CheckRecord::new("lambda_decreasing_under_inclusion", worst, 1.0, status)
                .with_meta("shared_taus", shared),
        );
    }
    report
}

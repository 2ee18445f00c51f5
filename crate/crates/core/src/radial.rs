//! Reference solutions for symmetric domains.
//!
//! * [`interval_eigenvalue`]: closed-form solution on each half of the
//!   interval plus bisection on the matching condition at the midpoint.
//! * [`radial_eigenpair`]: the radial reduction on a ball or annulus solved on
//!   a fine 1D grid with the same fitted stencil and policy iteration as the
//!   2D solver; the radial term enters as an extra drift `-(n-1)/ρ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{inverse_iteration, MLu, MMatrix};
use crate::operator::fitted_couplings;
use crate::optimizer::SolveOptions;

/// First zero of the Bessel function `J_0`.
pub const BESSEL_J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

#[derive(Clone, Debug, Serialize)]
pub struct RadialResult {
    /// Space dimension; 1 for the interval.
    pub n: usize,
    /// Inner radius (0 for the ball and the interval).
    pub r: f64,
    /// Outer radius, or the interval length.
    #[serde(rename = "R")]
    pub outer: f64,
    pub tau: f64,
    pub lambda: f64,
    /// Radius of the maximum of `Phi`: the turning point for the annulus,
    /// 0 for the ball, `L/2` for the interval.
    pub r_tau: f64,
    #[serde(skip)]
    pub rho: Vec<f64>,
    /// Max-normalised profile, 0 at Dirichlet ends.
    #[serde(skip)]
    pub phi: Vec<f64>,
    /// `1 - Phi` at full relative accuracy.
    #[serde(skip)]
    pub deficit: Vec<f64>,
    pub outer_iterations: usize,
    pub nonlinear_residual: f64,
}

impl RadialResult {
    pub fn table_csv(&self) -> String {
        let mut s = String::from("rho,Phi\n");
        for (r, p) in self.rho.iter().zip(&self.phi) {
            s.push_str(&format!("{},{}\n", fmt_f64(*r), fmt_f64(*p)));
        }
        s
    }

    pub fn scalars_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda": self.lambda,
            "r_tau": self.r_tau,
            "n": self.n,
            "r": self.r,
            "R": self.outer,
            "tau": self.tau,
        })
    }

    /// Linear interpolation of `Phi`.
    pub fn phi_at(&self, rho: f64) -> f64 {
        let k = self.rho.partition_point(|&x| x < rho);
        if k == 0 {
            return self.phi[0];
        }
        if k >= self.rho.len() {
            return *self.phi.last().expect("non-empty table");
        }
        let (x0, x1) = (self.rho[k - 1], self.rho[k]);
        let t = (rho - x0) / (x1 - x0);
        self.phi[k - 1] + t * (self.phi[k] - self.phi[k - 1])
    }
}

/// Matching function whose sign change brackets `λ` on the half interval
/// `(0, m)`: positive below the root, negative above.
fn interval_matching(lambda: f64, tau: f64, m: f64) -> f64 {
    let q = 0.25 * tau * tau;
    if lambda < q {
        let s = (q - lambda).sqrt();
        if s * m >= 1.0 {
            // G scaled by a positive factor, free of the cancellation in 2s - τ
            (-2.0 * s * m).exp() * (2.0 * s + tau).powi(2) - 4.0 * lambda
        } else {
            (s * m).cosh() - 0.5 * tau * (s * m).sinh() / s
        }
    } else if lambda == q {
        1.0 - 0.5 * tau * m
    } else {
        let w = (lambda - q).sqrt();
        (w * m).cos() - 0.5 * tau * (w * m).sin() / w
    }
}

/// Unnormalised half-interval profile at `0 <= x <= m`.
fn interval_shape(lambda: f64, tau: f64, x: f64) -> f64 {
    let q = 0.25 * tau * tau;
    if lambda < q {
        let s = (q - lambda).sqrt();
        // e^{-τx/2} sinh(sx)/s without overflow
        ((s - 0.5 * tau) * x).exp() * -(-2.0 * s * x).exp_m1() / (2.0 * s)
    } else if lambda == q {
        (-0.5 * tau * x).exp() * x
    } else {
        let w = (lambda - q).sqrt();
        (-0.5 * tau * x).exp() * (w * x).sin() / w
    }
}

/// Optimal eigenvalue on `(0, L)` from the closed form. The table has
/// `samples` points including both ends.
pub fn interval_eigenvalue(length: f64, tau: f64) -> Result<RadialResult> {
    interval_eigenvalue_table(length, tau, 2049)
}

pub fn interval_eigenvalue_table(length: f64, tau: f64, samples: usize) -> Result<RadialResult> {
    if !(length > 0.0) || !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("need L > 0 and τ >= 0, got L = {length}, τ = {tau}")));
    }
    if samples < 3 {
        return Err(Error::InvalidArgument("table needs at least 3 samples".into()));
    }
    let m = 0.5 * length;
    let pi = std::f64::consts::PI;
    let lambda = if tau == 0.0 {
        (pi / length).powi(2)
    } else {
        let mut hi = (pi / length).powi(2) + 0.25 * tau * tau;
        let mut lo = hi * 1e-300;
        if !(interval_matching(lo, tau, m) > 0.0 && interval_matching(hi, tau, m) < 0.0) {
            return Err(Error::Internal(format!("interval bracket failed at τ = {tau}")));
        }
        for _ in 0..10_000 {
            if hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            if interval_matching(mid, tau, m) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let top = interval_shape(lambda, tau, m);
    let mut rho = Vec::with_capacity(samples);
    let mut phi = Vec::with_capacity(samples);
    for i in 0..samples {
        let x = length * i as f64 / (samples - 1) as f64;
        let y = x.min(length - x);
        rho.push(x);
        phi.push(if y <= 0.0 { 0.0 } else { (interval_shape(lambda, tau, y) / top).min(1.0) });
    }
    let deficit = phi.iter().map(|p| 1.0 - p).collect();
    Ok(RadialResult {
        n: 1,
        r: 0.0,
        outer: length,
        tau,
        lambda,
        r_tau: m,
        rho,
        phi,
        deficit,
        outer_iterations: 0,
        nonlinear_residual: 0.0,
    })
}

/// Radius where the discrete slope of a table changes sign from positive
/// to negative, by linear interpolation of the slopes between the midpoints
/// of the bracketing intervals. Zero slopes are skipped; any other sign
/// pattern is an error.
pub fn turning_point(rho: &[f64], phi: &[f64]) -> Result<f64> {
    if rho.len() != phi.len() || rho.len() < 3 {
        return Err(Error::InvalidArgument("table needs matching columns of length >= 3".into()));
    }
    let slopes: Vec<(f64, f64)> = rho
        .windows(2)
        .zip(phi.windows(2))
        .map(|(x, y)| (0.5 * (x[0] + x[1]), (y[1] - y[0]) / (x[1] - x[0])))
        .filter(|&(_, s)| s != 0.0)
        .collect();
    let changes: Vec<usize> = (1..slopes.len())
        .filter(|&k| (slopes[k - 1].1 > 0.0) != (slopes[k].1 > 0.0))
        .collect();
    match changes.as_slice() {
        [] => Err(Error::TurningPoint("profile is monotone".into())),
        [k] if slopes[*k - 1].1 > 0.0 => {
            let ((m0, s0), (m1, s1)) = (slopes[k - 1], slopes[*k]);
            Ok(m0 + (m1 - m0) * s0 / (s0 - s1))
        }
        [_] => Err(Error::TurningPoint("slope changes from negative to positive".into())),
        many => Err(Error::TurningPoint(format!("{} slope sign changes", many.len()))),
    }
}

pub fn radial_eigenpair(n: usize, r: f64, outer: f64, tau: f64, nodes: usize) -> Result<RadialResult> {
    let opts = SolveOptions {
        outer_tol: 1e-10,
        inner_tol: 1e-12,
        ..SolveOptions::default()
    };
    radial_eigenpair_with(n, r, outer, tau, nodes, &opts)
}

/// Radial problem on `(r, R)` with `nodes` cells; `r = 0` is the ball.
pub fn radial_eigenpair_with(
    n: usize,
    r: f64,
    outer: f64,
    tau: f64,
    nodes: usize,
    opts: &SolveOptions,
) -> Result<RadialResult> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("radial reduction needs n >= 2, got {n}")));
    }
    if !(0.0 <= r && r < outer) {
        return Err(Error::InvalidDomain(format!("need 0 <= r < R, got r = {r}, R = {outer}")));
    }
    if nodes < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 cells, got {nodes}")));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidDomain(format!("drift bound must be a finite τ >= 0, got {tau}")));
    }
    opts.validate()?;
    let ball = r == 0.0;
    let h = (outer - r) / nodes as f64;
    // unknown k sits at radius r + (k + first) h
    let first = if ball { 0 } else { 1 };
    let count = nodes - first;
    let radius = |k: usize| r + (k + first) as f64 * h;
    let dim = n as f64;

    let couplings = |k: usize, v: f64| -> (f64, f64) {
        if ball && k == 0 {
            (0.0, 2.0 * dim / (h * h))
        } else {
            fitted_couplings(v - (dim - 1.0) / radius(k), h, h)
        }
    };
    let assemble = |v: &[f64]| {
        let mut a = MMatrix::with_capacity(count, 2 * count);
        for k in 0..count {
            let (cb, cf) = couplings(k, v[k]);
            let mut row = Vec::with_capacity(2);
            let mut excess = 0.0;
            if k > 0 {
                row.push((k - 1, cb));
            } else if !ball {
                excess += cb;
            }
            if k + 1 < count {
                row.push((k + 1, cf));
            } else {
                excess += cf;
            }
            a.push_row(row, excess);
        }
        a
    };

    let mut v = vec![0.0; count];
    let mut start: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut nl = f64::INFINITY;
    for iter in 1..=opts.max_outer {
        let a = assemble(&v);
        let lu = MLu::factor(&a, None)?;
        let it = inverse_iteration(&a, &lu, start.as_deref(), opts.inner_tol, opts.max_inner)?;
        trace.push(it.lambda);
        let psi = &it.deficit;
        let mut new_v = v.clone();
        nl = 0.0f64;
        for k in 0..count {
            let back = if k > 0 { psi[k - 1] } else if ball { psi[k] } else { 1.0 };
            let fwd = if k + 1 < count { psi[k + 1] } else { 1.0 };
            let (db, df) = (back - psi[k], fwd - psi[k]);
            let f = |vv: f64| {
                let (cb, cf) = couplings(k, vv);
                cb * db + cf * df
            };
            let f_cur = f(v[k]);
            let mut best = (v[k], f_cur);
            if !(ball && k == 0) {
                for cand in [0.0, -tau, tau] {
                    let fc = f(cand);
                    if fc < best.1 {
                        best = (cand, fc);
                    }
                }
            }
            new_v[k] = best.0;
            nl = nl.max((it.residual_vec[k] + best.1 - f_cur).abs());
        }
        let settled = iter > 1 && (it.lambda - trace[trace.len() - 2]).abs() <= opts.outer_tol * it.lambda;
        if settled && nl <= opts.outer_tol {
            let mut rho = Vec::with_capacity(nodes + 1);
            let mut deficit = Vec::with_capacity(nodes + 1);
            if !ball {
                rho.push(r);
                deficit.push(1.0);
            }
            for (k, &p) in psi.iter().enumerate() {
                rho.push(radius(k));
                deficit.push(p);
            }
            rho.push(outer);
            deficit.push(1.0);
            let phi: Vec<f64> = deficit.iter().map(|p| 1.0 - p).collect();
            let r_tau = if ball {
                0.0
            } else {
                let neg: Vec<f64> = deficit.iter().map(|p| -p).collect();
                let t = turning_point(&rho, &neg)?;
                if !(r < t && t < outer) {
                    return Err(Error::Internal(format!("turning point {t} outside ({r}, {outer})")));
                }
                t
            };
            return Ok(RadialResult {
                n,
                r,
                outer,
                tau,
                lambda: it.lambda,
                r_tau,
                rho,
                phi,
                deficit,
                outer_iterations: iter,
                nonlinear_residual: nl,
            });
        }
        v = new_v;
        start = Some(it.deficit);
    }
    Err(Error::OuterNotConverged {
        iterations: opts.max_outer,
        residual: nl,
        lambda_trace: trace,
    })
}

//! Dirichlet discretisation of `-Δ + v·∇` for a frozen drift and its
//! principal eigenpair.
//!
//! Each axis contributes a three-point stencil for `-u'' + b u'`. Both
//! supported drift treatments produce non-negative couplings for every `b`,
//! so the assembled matrix is always an M-matrix:
//!
//! * [`DriftScheme::Upwind`]: centred diffusion plus a one-sided difference
//!   taken against the drift.
//! * [`DriftScheme::Fitted`] (default): exponentially fitted coefficients,
//!   exact for constants and for `exp(b x)`. Upwinding smears the
//!   `exp(-τ d)` boundary layer over `O(1/(τ h))` cells; the fitted stencil
//!   resolves it at the same cost.
//!
//! With [`BoundaryScheme::Cut`] the stencil arm towards a Dirichlet neighbour
//! ends on the true boundary; [`BoundaryScheme::StairStep`] always uses `h`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, ScalarField, VectorField};
use crate::linalg::{inverse_iteration, nested_dissection, MLu, MMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    Upwind,
    #[default]
    Fitted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryScheme {
    StairStep,
    #[default]
    Cut,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub drift: DriftScheme,
    pub boundary: BoundaryScheme,
}

impl Discretization {
    pub const UPWIND_STAIRCASE: Discretization = Discretization {
        drift: DriftScheme::Upwind,
        boundary: BoundaryScheme::StairStep,
    };

    /// Couplings `(backward, forward)` of the stencil for `-u'' + b u'`.
    pub fn couplings(&self, b: f64, h_back: f64, h_fwd: f64) -> (f64, f64) {
        match self.drift {
            DriftScheme::Upwind => upwind_couplings(b, h_back, h_fwd),
            DriftScheme::Fitted => fitted_couplings(b, h_back, h_fwd),
        }
    }
}

/// Centred diffusion plus one-sided drift against the flow.
pub fn upwind_couplings(b: f64, h_back: f64, h_fwd: f64) -> (f64, f64) {
    let s = h_back + h_fwd;
    let mut back = 2.0 / (h_back * s);
    let mut fwd = 2.0 / (h_fwd * s);
    if b > 0.0 {
        back += b / h_back;
    } else {
        fwd -= b / h_fwd;
    }
    (back, fwd)
}

/// Exponentially fitted couplings on a possibly non-uniform three-point
/// stencil: the unique coefficients annihilating `1` and `exp(b x)` that
/// reproduce `-u'' + b u' = b` for `u = x`.
pub fn fitted_couplings(b: f64, h_back: f64, h_fwd: f64) -> (f64, f64) {
    if b < 0.0 {
        let (back, fwd) = fitted_nonneg(-b, h_fwd, h_back);
        (fwd, back)
    } else {
        fitted_nonneg(b, h_back, h_fwd)
    }
}

fn fitted_nonneg(b: f64, h1: f64, h2: f64) -> (f64, f64) {
    if b * h1.max(h2) < 0.5 {
        // series in b, free of cancellation as b -> 0
        let (mut dn, mut e1, mut e2) = (0.0, 0.0, 0.0);
        let mut fact = 1.0;
        let (mut bk, mut p1, mut p2) = (1.0, 1.0, 1.0);
        let mut bk2 = 1.0;
        for k in 1..=26u32 {
            // bk = b^(k-1), bk2 = b^(k-2), p1 = h1^(k-1), p2 = h2^(k-1)
            fact *= k as f64;
            let even = k % 2 == 0;
            e1 += if even { -bk * p1 } else { bk * p1 } / fact;
            e2 += bk * p2 / fact;
            if k >= 2 {
                dn += bk2 * if even { p2 + p1 } else { p2 - p1 } / fact;
                bk2 *= b;
            }
            bk *= b;
            p1 *= h1;
            p2 *= h2;
        }
        (e2 / (h1 * dn), e1 / (h2 * dn))
    } else {
        let e1 = -(-b * h1).exp_m1();
        let e2 = -(-b * h2).exp_m1();
        let q = (-b * h2).exp();
        let d = h1 * e2 - h2 * e1 * q;
        (b * e2 / d, b * e1 * q / d)
    }
}

/// Assembled operator over the interior nodes of a grid.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    grid: Arc<Grid>,
    matrix: MMatrix,
    tau_bound: f64,
    scheme: Discretization,
}

impl OperatorMatrix {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &MMatrix {
        &self.matrix
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    /// Largest drift magnitude seen during assembly.
    pub fn tau_bound(&self) -> f64 {
        self.tau_bound
    }

    pub fn scheme(&self) -> Discretization {
        self.scheme
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// Signed entry `A[i][j]` in interior numbering.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix.entry(i, j)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.matrix.excess(i)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.apply(x)
    }

    /// Sparse factorisation; nested dissection ordering in two dimensions.
    pub fn factor(&self) -> Result<MLu> {
        let perm = (self.grid.dim() == 2).then(|| {
            let coords: Vec<(u32, u32)> = self
                .grid
                .interior_nodes()
                .iter()
                .map(|&id| {
                    let (i, j) = self.grid.lattice(id);
                    (i as u32, j as u32)
                })
                .collect();
            nested_dissection(&coords)
        });
        MLu::factor(&self.matrix, perm)
    }
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.shape() == b.shape() && a.h() == b.h() && a.spec() == b.spec())
}

pub fn assemble(grid: &Arc<Grid>, v: &VectorField) -> Result<OperatorMatrix> {
    assemble_with(grid, v, Discretization::default())
}

pub fn assemble_with(
    grid: &Arc<Grid>,
    v: &VectorField,
    scheme: Discretization,
) -> Result<OperatorMatrix> {
    if !same_grid(grid, &v.grid) || v.values.len() != grid.node_count() {
        return Err(Error::DimensionMismatch(
            "drift is defined on a different grid".into(),
        ));
    }
    let dim = grid.dim();
    let h = grid.h();
    let n = grid.interior_count();
    let mut matrix = MMatrix::with_capacity(n, 2 * dim * n);
    let mut tau_bound = 0.0f64;
    let mut row = Vec::with_capacity(4);
    for (k, &id) in grid.interior_nodes().iter().enumerate() {
        let vk = v.values[id];
        if !(vk[0].is_finite() && vk[1].is_finite()) {
            return Err(Error::InvalidArgument(format!("drift is not finite at node {id}")));
        }
        tau_bound = tau_bound.max((vk[0] * vk[0] + vk[1] * vk[1]).sqrt());
        let arms = grid.arms(k);
        row.clear();
        let mut excess = 0.0;
        for axis in 0..dim {
            let (hb, hf) = match scheme.boundary {
                BoundaryScheme::Cut => (arms[2 * axis], arms[2 * axis + 1]),
                BoundaryScheme::StairStep => (h, h),
            };
            let (cb, cf) = scheme.couplings(vk[axis], hb, hf);
            for (backward, c) in [(true, cb), (false, cf)] {
                match grid.neighbor(id, axis, backward).and_then(|nb| grid.interior_index(nb)) {
                    Some(j) => row.push((j, c)),
                    None => excess += c,
                }
            }
        }
        matrix.push_row(row.iter().copied(), excess);
    }
    Ok(OperatorMatrix {
        grid: grid.clone(),
        matrix,
        tau_bound,
        scheme,
    })
}

/// Principal eigenpair with `max phi = 1`. `deficit` holds `1 - phi` on the
/// interior nodes at full relative accuracy.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub phi: ScalarField,
    pub deficit: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl EigenPair {
    /// Pair built from an arbitrary positive field, rescaled to `max = 1`.
    pub fn from_phi(lambda: f64, phi: ScalarField) -> Result<EigenPair> {
        let interior = phi.interior_values();
        let top = interior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(top > 0.0) {
            return Err(Error::InvalidArgument("field has no positive interior value".into()));
        }
        let deficit: Vec<f64> = interior.iter().map(|&p| 1.0 - p / top).collect();
        let grid = phi.grid.clone();
        let scaled: Vec<f64> = interior.iter().map(|&p| p / top).collect();
        Ok(EigenPair {
            lambda,
            phi: ScalarField::from_interior(grid, &scaled, 0.0, "phi"),
            deficit,
            iterations: 0,
            residual: f64::NAN,
        })
    }
}

pub fn principal_eigenpair(a: &OperatorMatrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    solve_from(a, None, tol, max_iter)
}

/// As [`principal_eigenpair`] but starting from a positive seed field
/// instead of the constant 1. The seed's scale is irrelevant.
pub fn principal_eigenpair_from(
    a: &OperatorMatrix,
    seed: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    let s = seed.interior_values();
    if s.len() != a.n() {
        return Err(Error::DimensionMismatch("seed is defined on a different grid".into()));
    }
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) || s.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("seed must be positive on interior nodes".into()));
    }
    let start: Vec<f64> = s.iter().map(|&x| 1.0 - x / top).collect();
    solve_from(a, Some(&start), tol, max_iter)
}

pub(crate) fn solve_from(
    a: &OperatorMatrix,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let lu = a.factor()?;
    let it = inverse_iteration(&a.matrix, &lu, start, tol, max_iter)?;
    Ok(pair_from_deficit(a, it.lambda, it.deficit, it.iterations, it.residual))
}

pub(crate) fn pair_from_deficit(
    a: &OperatorMatrix,
    lambda: f64,
    deficit: Vec<f64>,
    iterations: usize,
    residual: f64,
) -> EigenPair {
    let values: Vec<f64> = deficit.iter().map(|&p| 1.0 - p).collect();
    EigenPair {
        lambda,
        phi: ScalarField::from_interior(a.grid.clone(), &values, 0.0, "phi"),
        deficit,
        iterations,
        residual,
    }
}

/// `||A phi - lambda phi||_inf` over the interior nodes.
pub fn residual(a: &OperatorMatrix, p: &EigenPair) -> Result<f64> {
    if p.deficit.len() != a.n() {
        return Err(Error::DimensionMismatch("eigenpair is defined on a different grid".into()));
    }
    let ap = a.matrix.apply_deficit(&p.deficit);
    Ok(ap
        .iter()
        .zip(&p.deficit)
        .map(|(r, &d)| (r - p.lambda * (1.0 - d)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid_with_min, DomainSpec};

    fn grid(spec: DomainSpec, n: u32) -> Arc<Grid> {
        Arc::new(build_grid_with_min(&spec, n, 1).unwrap())
    }

    fn constant_drift(g: &Arc<Grid>, v: [f64; 2]) -> VectorField {
        let mut f = VectorField::zeros(g.clone(), "v");
        f.values.iter_mut().for_each(|x| *x = v);
        f
    }

    #[test]
    fn laplacian_rows() {
        let g = grid(DomainSpec::Interval { length: 1.0 }, 4);
        for scheme in [Discretization::default(), Discretization::UPWIND_STAIRCASE] {
            let a = assemble_with(&g, &constant_drift(&g, [0.0; 2]), scheme).unwrap();
            assert_eq!(a.n(), 3);
            assert!((a.entry(1, 0) + 16.0).abs() < 1e-12);
            assert!((a.entry(1, 1) - 32.0).abs() < 1e-12);
            assert!((a.entry(1, 2) + 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upwind_rows_for_positive_drift() {
        let g = grid(DomainSpec::Interval { length: 1.0 }, 4);
        let c = 3.0;
        let a = assemble_with(&g, &constant_drift(&g, [c, 0.0]), Discretization::UPWIND_STAIRCASE)
            .unwrap();
        assert!((a.entry(1, 0) - (-16.0 - 4.0 * c)).abs() < 1e-12);
        assert!((a.entry(1, 1) - (32.0 + 4.0 * c)).abs() < 1e-12);
        assert!((a.entry(1, 2) + 16.0).abs() < 1e-12);
    }

    #[test]
    fn row_sums_are_nonnegative_and_positive_at_the_boundary() {
        let g = grid(DomainSpec::Disk { radius: 1.0 }, 8);
        let v = constant_drift(&g, [7.0, -3.0]);
        for scheme in [Discretization::default(), Discretization::UPWIND_STAIRCASE] {
            let a = assemble_with(&g, &v, scheme).unwrap();
            for (k, &id) in g.interior_nodes().iter().enumerate() {
                let touches = (0..2).any(|ax| {
                    [true, false].iter().any(|&b| {
                        g.neighbor(id, ax, b).map(|nb| !g.is_interior(nb)).unwrap_or(true)
                    })
                });
                let s: f64 = (0..a.n()).map(|j| a.entry(k, j)).sum();
                assert!(s >= -1e-9 * a.entry(k, k));
                assert_eq!(touches, a.row_sum(k) > 0.0);
                assert!(a.entry(k, k) > 0.0);
            }
        }
    }

    #[test]
    fn fitted_limits() {
        let (b, f) = fitted_couplings(0.0, 0.1, 0.1);
        assert!((b - 100.0).abs() < 1e-10 && (f - 100.0).abs() < 1e-10);
        let (b, f) = fitted_couplings(0.0, 0.05, 0.1);
        assert!((b - 2.0 / (0.05 * 0.15)).abs() < 1e-9 && (f - 2.0 / (0.1 * 0.15)).abs() < 1e-9);
        // uniform arms: Bernoulli function
        let bern = |x: f64| x / x.exp_m1();
        for &x in &[1e-6, 0.3, 0.49, 0.51, 2.0, 30.0, -0.2, -5.0] {
            let h = 0.1;
            let (cb, cf) = fitted_couplings(x / h, h, h);
            let eb = bern(-x) / (h * h);
            let ef = bern(x) / (h * h);
            assert!((cb - eb).abs() <= 1e-12 * eb, "{x}: {cb} vs {eb}");
            assert!((cf - ef).abs() <= 1e-12 * ef.max(1e-300), "{x}: {cf} vs {ef}");
        }
    }

    #[test]
    fn fitted_stencil_is_exact_for_its_kernel() {
        for &(b, h1, h2) in &[(3.0, 0.1, 0.04), (-40.0, 0.02, 0.05), (0.7, 0.3, 0.01), (12.0, 0.05, 0.05)] {
            let (cb, cf) = fitted_couplings(b, h1, h2);
            let u = |x: f64| (b * x).exp();
            let r = cb * (u(0.0) - u(-h1)) + cf * (u(0.0) - u(h2));
            assert!(r.abs() <= 1e-10 * (cb + cf), "{b} {h1} {h2}: {r}");
            let lin = cb * h1 - cf * h2;
            assert!((lin - b).abs() <= 1e-10 * (cb + cf) * h1.max(h2), "{lin} vs {b}");
        }
    }

    #[test]
    fn interval_without_drift() {
        let g = grid(DomainSpec::Interval { length: 1.0 }, 512);
        let a = assemble(&g, &VectorField::zeros(g.clone(), "v")).unwrap();
        let p = principal_eigenpair(&a, 1e-12, 200).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((p.lambda - pi2).abs() < 1e-3 * pi2, "{}", p.lambda);
        let h: f64 = 1.0 / 512.0;
        let discrete = 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * h).cos());
        assert!((p.lambda - discrete).abs() < 1e-10 * discrete);
    }

    #[test]
    fn interval_with_constant_drift() {
        let g = grid(DomainSpec::Interval { length: 1.0 }, 512);
        let exact = std::f64::consts::PI.powi(2) + 4.0;
        for scheme in [Discretization::default(), Discretization::UPWIND_STAIRCASE] {
            let a = assemble_with(&g, &constant_drift(&g, [4.0, 0.0]), scheme).unwrap();
            let p = principal_eigenpair(&a, 1e-10, 200).unwrap();
            assert!((p.lambda - exact).abs() < 1e-2 * exact, "{scheme:?}: {}", p.lambda);
        }
    }

    /// First Dirichlet eigenvalue of the unit disk from Bessel shooting.
    fn disk_oracle() -> f64 {
        let shoot = |lam: f64| {
            // y'' + y'/r + lam y = 0 from a series start near 0, RK4
            let r0 = 1e-4;
            let mut y = 1.0 - lam * r0 * r0 / 4.0;
            let mut yp = -lam * r0 / 2.0;
            let steps = 20000;
            let dr = (1.0 - r0) / steps as f64;
            let f = |r: f64, y: f64, yp: f64| (yp, -yp / r - lam * y);
            let mut r = r0;
            for _ in 0..steps {
                let k1 = f(r, y, yp);
                let k2 = f(r + dr / 2.0, y + dr / 2.0 * k1.0, yp + dr / 2.0 * k1.1);
                let k3 = f(r + dr / 2.0, y + dr / 2.0 * k2.0, yp + dr / 2.0 * k2.1);
                let k4 = f(r + dr, y + dr * k3.0, yp + dr * k3.1);
                y += dr / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                yp += dr / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                r += dr;
            }
            y
        };
        let (mut lo, mut hi) = (4.0, 7.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if shoot(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn disk_without_drift() {
        let exact = disk_oracle();
        assert!((exact - 5.783185962946784).abs() < 1e-8);
        let g = grid(DomainSpec::Disk { radius: 1.0 }, 128);
        let a = assemble(&g, &VectorField::zeros(g.clone(), "v")).unwrap();
        let p = principal_eigenpair(&a, 1e-10, 200).unwrap();
        assert!((p.lambda - exact).abs() < 0.01 * exact, "{}", p.lambda);
        assert!(p.phi.interior_values().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn converged_residual_and_perturbation() {
        let g = grid(DomainSpec::Rectangle { width: 1.0, height: 0.7 }, 40);
        let a = assemble(&g, &constant_drift(&g, [2.0, -1.0])).unwrap();
        let p = principal_eigenpair(&a, 1e-10, 200).unwrap();
        let r0 = residual(&a, &p).unwrap();
        assert!(r0 <= 1e-10, "{r0}");
        assert!(p.residual <= 1e-10);

        let k = a.n() / 2;
        let mut phi = p.phi.clone();
        let id = g.interior_nodes()[k];
        phi.values[id] += 1e-3;
        let mut q = EigenPair::from_phi(p.lambda, phi).unwrap();
        q.lambda = p.lambda;
        let r1 = residual(&a, &q).unwrap();
        assert!(r1 >= r0 + 1e-3 * (a.entry(k, k) - p.lambda) * (1.0 - 1e-6), "{r1}");
    }

    #[test]
    fn mismatched_drift_is_rejected() {
        let g1 = grid(DomainSpec::Interval { length: 1.0 }, 8);
        let g2 = grid(DomainSpec::Interval { length: 1.0 }, 16);
        let v = VectorField::zeros(g2, "v");
        assert!(matches!(assemble(&g1, &v), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn grid_convergence_without_drift() {
        let lam = |n: u32| {
            let g = grid(DomainSpec::Rectangle { width: 1.0, height: 1.0 }, n);
            let a = assemble(&g, &VectorField::zeros(g.clone(), "v")).unwrap();
            principal_eigenpair(&a, 1e-12, 200).unwrap().lambda
        };
        let (l1, l2, l3) = (lam(8), lam(16), lam(32));
        assert!((l1 - l2).abs() >= 1.8 * (l2 - l3).abs());
    }
}

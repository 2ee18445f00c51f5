//! Sparse M-matrices and a factorisation that keeps high relative accuracy.
//!
//! An [`MMatrix`] is stored as non-negative couplings `c_ij = -a_ij` (i != j)
//! plus the row excess `s_i = sum_j a_ij >= 0`; the diagonal is implied.
//! [`MLu`] eliminates with the Grassmann-Taksar-Heyman trick: Schur complement
//! row sums are carried explicitly and pivots are rebuilt from them, so no
//! step subtracts like-signed quantities. Triangular solves against a
//! non-negative right-hand side are then componentwise accurate even when the
//! smallest eigenvalue is tiny compared with the diagonal.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact `a + b`.
    pub fn sum(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Dd { hi, lo }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(s, e + self.lo + o.lo);
        Dd { hi, lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul_f64(self, c: f64) -> Dd {
        let p = self.hi * c;
        let e = self.hi.mul_add(c, -p);
        let (hi, lo) = quick_two_sum(p, e + self.lo * c);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn total_cmp(&self, o: &Dd) -> std::cmp::Ordering {
        self.hi.total_cmp(&o.hi).then(self.lo.total_cmp(&o.lo))
    }
}

/// Square M-matrix in coupling form.
#[derive(Clone, Debug, Default)]
pub struct MMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    coupling: Vec<f64>,
    excess: Vec<f64>,
}

impl MMatrix {
    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        MMatrix {
            row_ptr,
            cols: Vec::with_capacity(nnz),
            coupling: Vec::with_capacity(nnz),
            excess: Vec::with_capacity(n),
        }
    }

    /// Appends the next row. Couplings must be non-negative and the excess
    /// non-negative; duplicate columns are not merged.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, excess: f64) {
        for (j, c) in entries {
            debug_assert!(c >= 0.0, "negative coupling {c}");
            self.cols.push(j as u32);
            self.coupling.push(c);
        }
        debug_assert!(excess >= 0.0);
        self.excess.push(excess);
        self.row_ptr.push(self.cols.len());
    }

    pub fn n(&self) -> usize {
        self.excess.len()
    }

    pub fn nnz_offdiag(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.coupling[r])
            .map(|(&j, &c)| (j as usize, c))
    }

    pub fn excess(&self, i: usize) -> f64 {
        self.excess[i]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.excess[i] + self.row(i).map(|(_, c)| c).sum::<f64>()
    }

    /// Signed entry `a_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag(i);
        }
        -self.row(i).filter(|&(k, _)| k == j).map(|(_, c)| c).sum::<f64>()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.excess[i] * x[i] + self.row(i).map(|(j, c)| c * (x[i] - x[j])).sum::<f64>()
            })
            .collect()
    }

    /// `A (1 - psi)`, evaluated from differences of `psi` so that small
    /// deficits keep their relative accuracy.
    pub fn apply_deficit(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.excess[i] * (1.0 - psi[i])
                    + self.row(i).map(|(j, c)| c * (psi[j] - psi[i])).sum::<f64>()
            })
            .collect()
    }

    fn residual_dd(&self, rhs: &[Dd], y: &[Dd]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let mut acc = rhs[i].sub(y[i].mul_f64(self.excess[i]));
                for (j, c) in self.row(i) {
                    acc = acc.sub(y[i].sub(y[j]).mul_f64(c));
                }
                acc.to_f64()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = self.diag(i);
            for (j, c) in self.row(i) {
                row[j] -= c;
            }
        }
        a
    }
}

/// Nested-dissection ordering for unknowns living on lattice points.
/// Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(coords: &[(u32, u32)]) -> Vec<usize> {
    let mut out = Vec::with_capacity(coords.len());
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    dissect(coords, &mut idx, &mut out);
    out
}

fn dissect(coords: &[(u32, u32)], idx: &mut [usize], out: &mut Vec<usize>) {
    if idx.len() <= 32 {
        idx.sort_unstable();
        out.extend_from_slice(idx);
        return;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (u32::MAX, 0, u32::MAX, 0);
    for &k in idx.iter() {
        let (x, y) = coords[k];
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let split_x = x1 - x0 >= y1 - y0;
    let key = |k: usize| if split_x { coords[k].0 } else { coords[k].1 };
    let mid = if split_x { (x0 + x1) / 2 } else { (y0 + y1) / 2 };
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut sep = Vec::new();
    for &k in idx.iter() {
        match key(k).cmp(&mid) {
            std::cmp::Ordering::Less => left.push(k),
            std::cmp::Ordering::Greater => right.push(k),
            std::cmp::Ordering::Equal => sep.push(k),
        }
    }
    if left.is_empty() && right.is_empty() {
        sep.sort_unstable();
        out.extend(sep);
        return;
    }
    dissect(coords, &mut left, out);
    dissect(coords, &mut right, out);
    sep.sort_unstable();
    out.extend(sep);
}

/// `P A P^T = L U` with unit lower `L`; both factors stored in coupling form.
#[derive(Clone, Debug)]
pub struct MLu {
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    l_cols: Vec<u32>,
    l_vals: Vec<f64>,
    u_ptr: Vec<usize>,
    u_cols: Vec<u32>,
    u_vals: Vec<f64>,
    u_diag: Vec<f64>,
}

impl MLu {
    pub fn factor(a: &MMatrix, perm: Option<Vec<usize>>) -> Result<MLu> {
        let n = a.n();
        let perm = perm.unwrap_or_else(|| (0..n).collect());
        if perm.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "ordering has {} entries for a {n}x{n} matrix",
                perm.len()
            )));
        }
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut lu = MLu {
            perm,
            l_ptr: vec![0],
            l_cols: Vec::new(),
            l_vals: Vec::new(),
            u_ptr: vec![0],
            u_cols: Vec::new(),
            u_vals: Vec::new(),
            u_diag: vec![0.0; n],
        };
        let mut row_sum = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut mark = vec![false; n];
        let mut lower: BinaryHeap<Reverse<u32>> = BinaryHeap::new();
        let mut upper: Vec<u32> = Vec::new();

        for i in 0..n {
            let old = lu.perm[i];
            for (j_old, c) in a.row(old) {
                let j = inv[j_old];
                if !mark[j] {
                    mark[j] = true;
                    if j < i {
                        lower.push(Reverse(j as u32));
                    } else {
                        upper.push(j as u32);
                    }
                }
                w[j] += c;
            }
            let mut s = a.excess(old);
            while let Some(Reverse(k)) = lower.pop() {
                let k = k as usize;
                let l = w[k] / lu.u_diag[k];
                w[k] = 0.0;
                mark[k] = false;
                lu.l_cols.push(k as u32);
                lu.l_vals.push(l);
                s += l * row_sum[k];
                for p in lu.u_ptr[k]..lu.u_ptr[k + 1] {
                    let j = lu.u_cols[p] as usize;
                    if !mark[j] {
                        mark[j] = true;
                        if j < i {
                            lower.push(Reverse(j as u32));
                        } else {
                            upper.push(j as u32);
                        }
                    }
                    w[j] += l * lu.u_vals[p];
                }
            }
            lu.l_ptr.push(lu.l_cols.len());

            upper.sort_unstable();
            let mut pivot = s;
            for &j in &upper {
                let j = j as usize;
                mark[j] = false;
                if j == i {
                    // a structural self-coupling carries no information
                    w[j] = 0.0;
                    continue;
                }
                lu.u_cols.push(j as u32);
                lu.u_vals.push(w[j]);
                pivot += w[j];
                w[j] = 0.0;
            }
            upper.clear();
            lu.u_ptr.push(lu.u_cols.len());
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Degenerate(format!(
                    "singular operator: zero pivot at row {i} (a component is not coupled to the boundary)"
                )));
            }
            lu.u_diag[i] = pivot;
            row_sum[i] = s;
        }
        Ok(lu)
    }

    pub fn n(&self) -> usize {
        self.u_diag.len()
    }

    pub fn fill(&self) -> usize {
        self.l_cols.len() + self.u_cols.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut z: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let mut acc = z[i];
            for p in self.l_ptr[i]..self.l_ptr[i + 1] {
                acc += self.l_vals[p] * z[self.l_cols[p] as usize];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for p in self.u_ptr[i]..self.u_ptr[i + 1] {
                acc += self.u_vals[p] * z[self.u_cols[p] as usize];
            }
            z[i] = acc / self.u_diag[i];
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = z[new];
        }
        out
    }

    /// Solve with the right-hand side and result in double-double, refining
    /// against the exact coupling form of `a`.
    pub fn solve_dd(&self, a: &MMatrix, rhs: &[Dd]) -> Vec<Dd> {
        let hi: Vec<f64> = rhs.iter().map(|v| v.hi).collect();
        let mut y: Vec<Dd> = self.solve(&hi).into_iter().map(Dd::new).collect();
        for _ in 0..2 {
            let r = a.residual_dd(rhs, &y);
            let d = self.solve(&r);
            for (yi, di) in y.iter_mut().zip(d) {
                *yi = yi.add(Dd::new(di));
            }
        }
        y
    }
}

/// Principal eigenpair of an M-matrix from inverse iteration.
///
/// The eigenvector is carried as its deficit `psi = 1 - phi` with
/// `max phi = 1`, which keeps the variation of `phi` near its maximum
/// resolvable when the eigenvalue is exponentially small.
#[derive(Clone, Debug)]
pub struct InverseIteration {
    pub lambda: f64,
    pub deficit: Vec<f64>,
    /// `A phi - lambda phi` for the returned pair (exact solves assumed).
    pub residual_vec: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn inverse_iteration(
    a: &MMatrix,
    lu: &MLu,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<InverseIteration> {
    let n = a.n();
    let mut psi: Vec<f64> = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(Error::DimensionMismatch(format!(
                "start vector has {} entries, expected {n}",
                s.len()
            )))
        }
        None => vec![0.0; n],
    };
    let mut previous: Option<f64> = None;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let x: Vec<Dd> = psi.iter().map(|&p| Dd::sum(1.0, -p)).collect();
        let y = lu.solve_dd(a, &x);
        if let Some(bad) = y.iter().position(|v| !(v.hi > 0.0)) {
            return Err(Error::Internal(format!(
                "non-positive inverse iterate at unknown {bad}: {:e}",
                y[bad].hi
            )));
        }
        let top = y
            .iter()
            .copied()
            .max_by(|a, b| a.total_cmp(b))
            .expect("non-empty system");
        let (mut xy, mut yy) = (0.0, 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            xy += xi.hi * yi.hi;
            yy += yi.hi * yi.hi;
        }
        let lambda = xy / yy;
        let mut residual_vec = Vec::with_capacity(n);
        for i in 0..n {
            psi[i] = top.sub(y[i]).to_f64() / top.hi;
            residual_vec.push(x[i].sub(y[i].mul_f64(lambda)).to_f64() / top.hi);
        }
        residual = residual_vec.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if let Some(prev) = previous {
            if (lambda - prev).abs() <= tol * lambda && residual <= tol {
                return Ok(InverseIteration {
                    lambda,
                    deficit: psi,
                    residual_vec,
                    residual,
                    iterations: it,
                });
            }
        }
        previous = Some(lambda);
    }
    Err(Error::NotConverged { iterations: max_iter, residual })
}

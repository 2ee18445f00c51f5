//! Domains, uniform Cartesian grids and distance-to-boundary fields.
//!
//! Grids are node based: node `id = ix * ny + iy`, so iterating ids visits
//! nodes in lexicographic `(x, y)` order. A node is interior iff it lies
//! strictly inside the domain; non-interior nodes adjacent to an interior node
//! carry the homogeneous Dirichlet condition.
//!
//! For the primitive domains each interior node also records, per axis and
//! direction, the distance to the next stencil point: `h` when that neighbour
//! is interior, otherwise the exact distance to where the grid line crosses
//! the boundary. The operator uses these to place the Dirichlet condition on
//! the true boundary instead of on the stair-step.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear node index into a [`Grid`].
pub type NodeId = usize;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `(0, length)`.
    Interval { length: f64 },
    /// `(0, width) x (0, height)`.
    Rectangle { width: f64, height: f64 },
    /// Disk of the given radius centred at the origin.
    Disk { radius: f64 },
    /// `B_outer \ closure(B_inner)`, centred at the origin.
    Annulus { inner: f64, outer: f64 },
    /// Rasterised domain. `bitmap[j]` is the row of nodes at `y = j * cell`;
    /// character `i` of that row (`'1'` or `'#'` for inside) is the node at
    /// `x = i * cell`.
    Mask { cell: f64, bitmap: Vec<String> },
}

impl DomainSpec {
    pub fn dimension(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            _ => 2,
        }
    }

    pub fn is_primitive(&self) -> bool {
        !matches!(self, DomainSpec::Mask { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidDomain(format!("{name} must be a positive length, got {x}")))
            }
        };
        match self {
            DomainSpec::Interval { length } => positive("length", *length),
            DomainSpec::Rectangle { width, height } => {
                positive("width", *width)?;
                positive("height", *height)
            }
            DomainSpec::Disk { radius } => positive("radius", *radius),
            DomainSpec::Annulus { inner, outer } => {
                positive("inner", *inner)?;
                positive("outer", *outer)?;
                if inner >= outer {
                    return Err(Error::InvalidDomain(format!(
                        "annulus requires inner < outer, got inner = {inner}, outer = {outer}"
                    )));
                }
                Ok(())
            }
            DomainSpec::Mask { cell, bitmap } => {
                positive("cell", *cell)?;
                let inside = bitmap
                    .iter()
                    .flat_map(|row| row.chars())
                    .filter(|c| mask_bit(*c))
                    .count();
                if inside == 0 {
                    return Err(Error::InvalidDomain("mask has no inside cells".into()));
                }
                Ok(())
            }
        }
    }

    /// Inradius for primitive domains.
    pub fn inradius(&self) -> Option<f64> {
        match self {
            DomainSpec::Interval { length } => Some(0.5 * length),
            DomainSpec::Rectangle { width, height } => Some(0.5 * width.min(*height)),
            DomainSpec::Disk { radius } => Some(*radius),
            DomainSpec::Annulus { inner, outer } => Some(0.5 * (outer - inner)),
            DomainSpec::Mask { .. } => None,
        }
    }

    /// Positive strictly inside, non-positive outside. Equal to the exact
    /// distance to the boundary on the closure of the domain.
    pub(crate) fn depth(&self, p: [f64; 2]) -> f64 {
        match self {
            DomainSpec::Interval { length } => p[0].min(length - p[0]),
            DomainSpec::Rectangle { width, height } => {
                p[0].min(width - p[0]).min(p[1]).min(height - p[1])
            }
            DomainSpec::Disk { radius } => radius - norm(p),
            DomainSpec::Annulus { inner, outer } => {
                let r = norm(p);
                (r - inner).min(outer - r)
            }
            DomainSpec::Mask { .. } => unreachable!("mask depth has no closed form"),
        }
    }

    /// Distance from `p` along `dir * e_axis` to the first boundary crossing.
    fn ray_exit(&self, p: [f64; 2], axis: usize, dir: f64) -> f64 {
        let pc = p[axis];
        match self {
            DomainSpec::Interval { length } => {
                if dir > 0.0 {
                    length - pc
                } else {
                    pc
                }
            }
            DomainSpec::Rectangle { width, height } => {
                let hi = if axis == 0 { *width } else { *height };
                if dir > 0.0 {
                    hi - pc
                } else {
                    pc
                }
            }
            DomainSpec::Disk { radius } => circle_exit(p, axis, dir, *radius),
            DomainSpec::Annulus { inner, outer } => {
                let mut t = circle_exit(p, axis, dir, *outer);
                let p2 = p[0] * p[0] + p[1] * p[1];
                let disc = pc * pc + inner * inner - p2;
                if disc >= 0.0 {
                    let t_in = -dir * pc - disc.sqrt();
                    if t_in > 0.0 {
                        t = t.min(t_in);
                    }
                }
                t
            }
            DomainSpec::Mask { .. } => f64::INFINITY,
        }
    }

    /// Outward unit normal at (or nearest to) a boundary point.
    pub fn outward_normal(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        match self {
            DomainSpec::Interval { length } => {
                Ok(if y[0] < 0.5 * length { [-1.0, 0.0] } else { [1.0, 0.0] })
            }
            DomainSpec::Rectangle { width, height } => {
                let gaps = [y[0], width - y[0], y[1], height - y[1]];
                let normals = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];
                let k = (0..4)
                    .min_by(|&a, &b| gaps[a].abs().total_cmp(&gaps[b].abs()))
                    .unwrap();
                Ok(normals[k])
            }
            DomainSpec::Disk { .. } => unit(y),
            DomainSpec::Annulus { inner, outer } => {
                let r = norm(y);
                let u = unit(y)?;
                if (r - inner).abs() < (outer - r).abs() {
                    Ok([-u[0], -u[1]])
                } else {
                    Ok(u)
                }
            }
            DomainSpec::Mask { .. } => Err(Error::NoClosedForm),
        }
    }
}

fn mask_bit(c: char) -> bool {
    c == '1' || c == '#'
}

fn norm(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

fn unit(p: [f64; 2]) -> Result<[f64; 2]> {
    let n = norm(p);
    if n == 0.0 {
        return Err(Error::InvalidArgument("normal undefined at the origin".into()));
    }
    Ok([p[0] / n, p[1] / n])
}

fn circle_exit(p: [f64; 2], axis: usize, dir: f64, radius: f64) -> f64 {
    let pc = p[axis];
    let p2 = p[0] * p[0] + p[1] * p[1];
    -dir * pc + (pc * pc + radius * radius - p2).max(0.0).sqrt()
}

/// Exact Euclidean distance to the boundary of a primitive domain.
pub fn exact_distance(spec: &DomainSpec, point: [f64; 2]) -> Result<f64> {
    if !spec.is_primitive() {
        return Err(Error::NoClosedForm);
    }
    Ok(spec.depth(point).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

#[derive(Clone, Debug)]
pub struct Grid {
    spec: DomainSpec,
    dim: usize,
    h: f64,
    shape: [usize; 2],
    origin: [f64; 2],
    class: Vec<NodeClass>,
    index: Vec<u32>,
    interior: Vec<NodeId>,
    // per interior node: stencil arm lengths (-x, +x, -y, +y)
    arms: Vec<[f64; 4]>,
}

/// Number of lattice points strictly inside an open segment of length `w`
/// in the worst alignment.
fn nodes_across(w: f64, h: f64) -> usize {
    let cells = (w / h * (1.0 - 1e-12)).ceil() as usize;
    cells.saturating_sub(1)
}

/// Minimum number of interior nodes across the thinnest feature.
pub const MIN_NODES_ACROSS: usize = 4;

pub fn build_grid(spec: &DomainSpec, nodes_per_unit: u32) -> Result<Grid> {
    build_grid_with_min(spec, nodes_per_unit, MIN_NODES_ACROSS)
}

/// [`build_grid`] with an explicit resolution floor (`min_nodes >= 1`).
pub fn build_grid_with_min(spec: &DomainSpec, nodes_per_unit: u32, min_nodes: usize) -> Result<Grid> {
    spec.validate()?;
    if nodes_per_unit == 0 && spec.is_primitive() {
        return Err(Error::InvalidArgument("nodes_per_unit must be positive".into()));
    }

    let (h, shape, origin) = match spec {
        DomainSpec::Mask { cell, bitmap } => {
            let w = bitmap.iter().map(|r| r.chars().count()).max().unwrap_or(0);
            (*cell, [w + 2, bitmap.len() + 2], [-cell, -cell])
        }
        _ => {
            let h = 1.0 / nodes_per_unit as f64;
            let check = |feature: &'static str, w: f64| {
                let nodes = nodes_across(w, h);
                if nodes < min_nodes.max(1) {
                    Err(Error::TooCoarse { feature, nodes })
                } else {
                    Ok(())
                }
            };
            let span = |len: f64| (len / h).ceil() as usize;
            match spec {
                DomainSpec::Interval { length } => {
                    check("interval length", *length)?;
                    (h, [span(*length) + 1, 1], [0.0, 0.0])
                }
                DomainSpec::Rectangle { width, height } => {
                    check("rectangle side", width.min(*height))?;
                    (h, [span(*width) + 1, span(*height) + 1], [0.0, 0.0])
                }
                DomainSpec::Disk { radius } => {
                    check("disk diameter", 2.0 * radius)?;
                    let m = span(*radius);
                    let o = -(m as f64) * h;
                    (h, [2 * m + 1, 2 * m + 1], [o, o])
                }
                DomainSpec::Annulus { inner, outer } => {
                    check("annulus width", outer - inner)?;
                    let m = span(*outer);
                    let o = -(m as f64) * h;
                    (h, [2 * m + 1, 2 * m + 1], [o, o])
                }
                DomainSpec::Mask { .. } => unreachable!(),
            }
        }
    };

    let dim = spec.dimension();
    let total = shape[0] * shape[1];
    let mut class = vec![NodeClass::Exterior; total];
    let coord = |id: NodeId| {
        let (ix, iy) = (id / shape[1], id % shape[1]);
        [origin[0] + ix as f64 * h, origin[1] + iy as f64 * h]
    };

    match spec {
        DomainSpec::Mask { bitmap, .. } => {
            for (j, row) in bitmap.iter().enumerate() {
                for (i, c) in row.chars().enumerate() {
                    if mask_bit(c) {
                        class[(i + 1) * shape[1] + (j + 1)] = NodeClass::Interior;
                    }
                }
            }
        }
        _ => {
            let tol = 1e-9 * h;
            for (id, cl) in class.iter_mut().enumerate() {
                if spec.depth(coord(id)) > tol {
                    *cl = NodeClass::Interior;
                }
            }
        }
    }

    let mut grid = Grid {
        spec: spec.clone(),
        dim,
        h,
        shape,
        origin,
        class,
        index: vec![NONE; total],
        interior: Vec::new(),
        arms: Vec::new(),
    };

    for id in 0..total {
        if grid.class[id] == NodeClass::Interior {
            grid.index[id] = grid.interior.len() as u32;
            grid.interior.push(id);
        }
    }
    if grid.interior.is_empty() {
        return Err(Error::Degenerate("no interior nodes".into()));
    }

    for k in 0..grid.interior.len() {
        let id = grid.interior[k];
        let mut arm = [h; 4];
        for axis in 0..dim {
            for (side, dir) in [(0usize, -1.0f64), (1, 1.0)] {
                let nb = grid
                    .neighbor(id, axis, dir < 0.0)
                    .ok_or_else(|| Error::Degenerate("interior node on the grid edge".into()))?;
                if grid.class[nb] != NodeClass::Interior {
                    grid.class[nb] = NodeClass::Boundary;
                    if spec.is_primitive() {
                        let t = spec.ray_exit(coord(id), axis, dir);
                        arm[2 * axis + side] = t.clamp(1e-9 * h, h);
                    }
                }
            }
        }
        grid.arms.push(arm);
    }

    let components = grid.count_components();
    if components != 1 {
        return Err(Error::Degenerate(format!(
            "interior is split into {components} disconnected pieces"
        )));
    }
    Ok(grid)
}

impl Grid {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn node_count(&self) -> usize {
        self.class.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    /// Interior node ids in lexicographic order.
    pub fn interior_nodes(&self) -> &[NodeId] {
        &self.interior
    }

    pub fn interior_index(&self, id: NodeId) -> Option<usize> {
        match self.index[id] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    pub fn class(&self, id: NodeId) -> NodeClass {
        self.class[id]
    }

    pub fn is_interior(&self, id: NodeId) -> bool {
        self.class[id] == NodeClass::Interior
    }

    pub fn lattice(&self, id: NodeId) -> (usize, usize) {
        (id / self.shape[1], id % self.shape[1])
    }

    pub fn node_at(&self, ix: usize, iy: usize) -> NodeId {
        ix * self.shape[1] + iy
    }

    pub fn coords(&self, id: NodeId) -> [f64; 2] {
        let (ix, iy) = self.lattice(id);
        [
            self.origin[0] + ix as f64 * self.h,
            self.origin[1] + iy as f64 * self.h,
        ]
    }

    /// Axis neighbour, `None` when it falls off the lattice.
    pub fn neighbor(&self, id: NodeId, axis: usize, backward: bool) -> Option<NodeId> {
        let (ix, iy) = self.lattice(id);
        let (mut i, mut j) = (ix as isize, iy as isize);
        let step = if backward { -1 } else { 1 };
        if axis == 0 {
            i += step;
        } else {
            j += step;
        }
        if i < 0 || j < 0 || i as usize >= self.shape[0] || j as usize >= self.shape[1] {
            None
        } else {
            Some(self.node_at(i as usize, j as usize))
        }
    }

    /// Stencil arm lengths `(-x, +x, -y, +y)` of interior node `k`.
    pub fn arms(&self, k: usize) -> [f64; 4] {
        self.arms[k]
    }

    /// Node nearest to a point (clamped to the lattice).
    pub fn nearest_node(&self, p: [f64; 2]) -> NodeId {
        let idx = |a: usize| {
            let t = ((p[a] - self.origin[a]) / self.h).round();
            t.clamp(0.0, (self.shape[a] - 1) as f64) as usize
        };
        self.node_at(idx(0), if self.dim == 1 { 0 } else { idx(1) })
    }

    fn count_components(&self) -> usize {
        let mut seen = vec![false; self.node_count()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for &start in &self.interior {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(id) = queue.pop_front() {
                for axis in 0..self.dim {
                    for backward in [true, false] {
                        if let Some(nb) = self.neighbor(id, axis, backward) {
                            if self.is_interior(nb) && !seen[nb] {
                                seen[nb] = true;
                                queue.push_back(nb);
                            }
                        }
                    }
                }
            }
        }
        count
    }

    /// Graph distance (axis steps) from the nearest non-interior node; 0 on
    /// non-interior nodes.
    pub fn boundary_graph_distance(&self) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        for id in 0..self.node_count() {
            if self.class[id] != NodeClass::Interior {
                dist[id] = 0;
                if self.class[id] == NodeClass::Boundary {
                    queue.push_back(id);
                }
            }
        }
        while let Some(id) = queue.pop_front() {
            for axis in 0..self.dim {
                for backward in [true, false] {
                    if let Some(nb) = self.neighbor(id, axis, backward) {
                        if dist[nb] == u32::MAX {
                            dist[nb] = dist[id] + 1;
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        dist
    }
}

/// Node-indexed scalar values over a grid. Non-interior nodes hold 0 for
/// Dirichlet-type fields.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub tag: String,
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>, tag: &str) -> Self {
        let n = grid.node_count();
        ScalarField { grid, values: vec![0.0; n], tag: tag.to_string() }
    }

    /// Builds a field from values on interior nodes (in interior order).
    pub fn from_interior(grid: Arc<Grid>, interior: &[f64], fill: f64, tag: &str) -> Self {
        let mut values = vec![fill; grid.node_count()];
        for (k, &id) in grid.interior_nodes().iter().enumerate() {
            values[id] = interior[k];
        }
        ScalarField { grid, values, tag: tag.to_string() }
    }

    pub fn interior_values(&self) -> Vec<f64> {
        self.grid.interior_nodes().iter().map(|&id| self.values[id]).collect()
    }

    /// Multilinear interpolation at an arbitrary point of the lattice box.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let g = &self.grid;
        let locate = |a: usize| {
            let t = (p[a] - g.origin[a]) / g.h;
            let max = (g.shape[a] - 1) as f64;
            let t = t.clamp(0.0, max);
            let i = (t.floor() as usize).min(g.shape[a].saturating_sub(2));
            (i, t - i as f64)
        };
        let (i, fx) = locate(0);
        if g.dim == 1 {
            let a = self.values[g.node_at(i, 0)];
            let b = self.values[g.node_at(i + 1, 0)];
            return a + fx * (b - a);
        }
        let (j, fy) = locate(1);
        let v = |di: usize, dj: usize| self.values[g.node_at(i + di, j + dj)];
        (1.0 - fx) * ((1.0 - fy) * v(0, 0) + fy * v(0, 1)) + fx * ((1.0 - fy) * v(1, 0) + fy * v(1, 1))
    }
}

/// Node-indexed vectors; the second component is unused in 1D.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: Arc<Grid>,
    pub values: Vec<[f64; 2]>,
    pub valid: Option<Vec<bool>>,
    pub tag: String,
}

impl VectorField {
    pub fn zeros(grid: Arc<Grid>, tag: &str) -> Self {
        let n = grid.node_count();
        VectorField { grid, values: vec![[0.0; 2]; n], valid: None, tag: tag.to_string() }
    }

    pub fn is_valid(&self, id: NodeId) -> bool {
        self.valid.as_ref().map_or(true, |v| v[id])
    }

    pub fn magnitude(&self, id: NodeId) -> f64 {
        norm(self.values[id])
    }
}

/// Distance to the boundary at every node (0 on non-interior nodes).
///
/// Primitive domains use the closed form; masks solve `|∇d| = 1` by fast
/// sweeping with `d = 0` on the Dirichlet nodes.
pub fn distance_field(grid: &Arc<Grid>) -> Result<ScalarField> {
    let mut field = ScalarField::zeros(grid.clone(), "distance");
    if grid.spec.is_primitive() {
        for &id in grid.interior_nodes() {
            field.values[id] = exact_distance(&grid.spec, grid.coords(id))?;
        }
        return Ok(field);
    }
    fast_sweep(grid, &mut field.values)?;
    Ok(field)
}

fn fast_sweep(grid: &Grid, d: &mut [f64]) -> Result<()> {
    let h = grid.h;
    for &id in grid.interior_nodes() {
        d[id] = f64::INFINITY;
    }
    let [nx, ny] = grid.shape;
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];
    for _ in 0..500 {
        let mut change = 0.0f64;
        for &(rev_x, rev_y) in &orders {
            for a in 0..nx {
                let ix = if rev_x { nx - 1 - a } else { a };
                for b in 0..ny {
                    let iy = if rev_y { ny - 1 - b } else { b };
                    let id = grid.node_at(ix, iy);
                    if !grid.is_interior(id) {
                        continue;
                    }
                    let along = |axis: usize| {
                        let lo = grid.neighbor(id, axis, true).map_or(f64::INFINITY, |n| d[n]);
                        let hi = grid.neighbor(id, axis, false).map_or(f64::INFINITY, |n| d[n]);
                        lo.min(hi)
                    };
                    let a_x = along(0);
                    let update = if grid.dim == 1 {
                        a_x + h
                    } else {
                        let a_y = along(1);
                        if (a_x - a_y).abs() >= h {
                            a_x.min(a_y) + h
                        } else {
                            0.5 * (a_x + a_y + (2.0 * h * h - (a_x - a_y).powi(2)).sqrt())
                        }
                    };
                    if update < d[id] {
                        let delta = if d[id].is_finite() { d[id] - update } else { f64::INFINITY };
                        change = change.max(delta);
                        d[id] = update;
                    }
                }
            }
        }
        if change < 1e-12 {
            return Ok(());
        }
    }
    Err(Error::Internal("fast sweeping did not reach a fixed point".into()))
}

/// Maximum of a distance field and all interior nodes within `tol` of it,
/// in lexicographic order.
pub fn inradius_and_argmax(d: &ScalarField, tol: f64) -> Result<(f64, Vec<NodeId>)> {
    let nodes = d.grid.interior_nodes();
    let r = nodes
        .iter()
        .map(|&id| d.values[id])
        .fold(f64::NEG_INFINITY, f64::max);
    if !r.is_finite() {
        return Err(Error::Degenerate("empty interior".into()));
    }
    let arg = nodes.iter().copied().filter(|&id| d.values[id] >= r - tol).collect();
    Ok((r, arg))
}

/// Interior nodes with `d < delta`, as a mask over all grid nodes.
pub fn boundary_layer_mask(d: &ScalarField, delta: f64) -> Vec<bool> {
    let mut mask = vec![false; d.grid.node_count()];
    for &id in d.grid.interior_nodes() {
        mask[id] = d.values[id] < delta;
    }
    mask
}

/// Finite-difference gradient of a distance field. Nodes where the computed
/// gradient is shorter than 0.9 are on (or next to) the ridge and are marked
/// invalid.
pub fn grad_distance(d: &ScalarField) -> VectorField {
    const RIDGE: f64 = 0.9;
    let grid = &d.grid;
    let h = grid.h;
    let mut out = VectorField::zeros(grid.clone(), "grad_distance");
    let mut valid = vec![false; grid.node_count()];
    for &id in grid.interior_nodes() {
        let mut g = [0.0; 2];
        for (axis, gc) in g.iter_mut().enumerate().take(grid.dim) {
            let lo = grid.neighbor(id, axis, true).filter(|&n| grid.is_interior(n));
            let hi = grid.neighbor(id, axis, false).filter(|&n| grid.is_interior(n));
            *gc = match (lo, hi) {
                (Some(a), Some(b)) => (d.values[b] - d.values[a]) / (2.0 * h),
                (Some(a), None) => (d.values[id] - d.values[a]) / h,
                (None, Some(b)) => (d.values[b] - d.values[id]) / h,
                (None, None) => 0.0,
            };
        }
        out.values[id] = g;
        valid[id] = norm(g) >= RIDGE;
    }
    out.valid = Some(valid);
    out
}

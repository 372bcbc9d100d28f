//! Regular tensor grids in one and two dimensions, scalar/vector fields on
//! them, and the discrete calculus (trapezoidal quadrature, second-order
//! gradients and Hessians) that the OT computations are built on.
//!
//! Node storage is row-major over axes with axis 0 fastest, so the linear
//! index of node `(i0, i1)` is `i0 + n0 * i1`. Grids are immutable after
//! construction and fields carry a copy of their grid; operations on
//! mismatched grids are rejected.

use crate::{Error, Result};

pub const DENSITY_MASS_TOL: f64 = 1e-12;

/// A uniform tensor grid on a box, `dim` in {1, 2}, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorGrid {
    dim: usize,
    nodes: [usize; 2],
    domain: [[f64; 2]; 2],
    spacing: [f64; 2],
}

impl TensorGrid {
    pub fn new(dim: usize, nodes_per_axis: &[usize], domain: &[[f64; 2]]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if nodes_per_axis.len() != dim || domain.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "expected {dim} axis specifications, got {} nodes / {} intervals",
                nodes_per_axis.len(),
                domain.len()
            )));
        }
        let mut nodes = [1usize; 2];
        let mut dom = [[0.0, 1.0]; 2];
        let mut spacing = [0.0f64; 2];
        for a in 0..dim {
            if nodes_per_axis[a] < 2 {
                return Err(Error::TooFewNodes(nodes_per_axis[a]));
            }
            let [lo, hi] = domain[a];
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidDomain(lo, hi));
            }
            nodes[a] = nodes_per_axis[a];
            dom[a] = [lo, hi];
            spacing[a] = (hi - lo) / (nodes_per_axis[a] - 1) as f64;
        }
        Ok(Self {
            dim,
            nodes,
            domain: dom,
            spacing,
        })
    }

    /// Unit-interval or unit-square grid with the same node count per axis.
    pub fn unit(dim: usize, nodes_per_axis: usize) -> Result<Self> {
        let per_axis = vec![nodes_per_axis; dim];
        let dom = vec![[0.0, 1.0]; dim];
        Self::new(dim, &per_axis, &dom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis_nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn domain(&self, axis: usize) -> [f64; 2] {
        self.domain[axis]
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.domain[axis][0] + self.spacing[axis] * i as f64
    }

    /// Multi-index of a linear node index, axis 0 fastest.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.nodes[0], idx / self.nodes[0]]
    }

    pub fn linear_index(&self, i0: usize, i1: usize) -> usize {
        i0 + self.nodes[0] * i1
    }

    /// Physical position of a node; the second entry is 0 in 1D.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 2];
        for a in 0..self.dim {
            p[a] = self.coordinate(a, mi[a]);
        }
        p
    }

    /// Node closest to the domain center; anchor for additive-constant gauges.
    pub fn center_node(&self) -> usize {
        let mut mi = [0usize; 2];
        for a in 0..self.dim {
            mi[a] = (self.nodes[a] - 1) / 2;
        }
        self.linear_index(mi[0], mi[1])
    }

    fn axis_quad_weight(&self, axis: usize, i: usize) -> f64 {
        let h = self.spacing[axis];
        if i == 0 || i == self.nodes[axis] - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// Trapezoidal quadrature weight of a node (tensor product over axes).
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let mi = self.multi_index(idx);
        let mut w = 1.0;
        for a in 0..self.dim {
            w *= self.axis_quad_weight(a, mi[a]);
        }
        w
    }

    pub fn quad_weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.quad_weight(i)).collect()
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim).any(|a| mi[a] == 0 || mi[a] == self.nodes[a] - 1)
    }
}

/// A scalar field collocated on the nodes of a [`TensorGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: TensorGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TensorGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "value count {} does not match node count {}",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TensorGrid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid,
        }
    }

    pub fn constant(grid: TensorGrid, c: f64) -> Self {
        Self {
            values: vec![c; grid.node_count()],
            grid,
        }
    }

    /// Evaluate `f` at every node position.
    pub fn from_fn(grid: TensorGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| {
                let p = grid.position(i);
                f(&p[..grid.dim()])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &GridField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Trapezoidal-rule integral over the grid; exact for per-axis affine
    /// functions.
    pub fn quadrature(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.quad_weight(i) * v)
            .sum()
    }

    /// `∫ f g` by trapezoidal quadrature.
    pub fn inner_quad(&self, other: &GridField) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| self.grid.quad_weight(i) * a * b)
            .sum())
    }

    /// `∫ f g w` for a nodal weight field `w`.
    pub fn inner_quad_weighted(&self, other: &GridField, weight: &GridField) -> Result<f64> {
        self.same_grid(other)?;
        self.same_grid(weight)?;
        Ok((0..self.values.len())
            .map(|i| {
                self.grid.quad_weight(i) * self.values[i] * other.values[i] * weight.values[i]
            })
            .sum())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &GridField, s: f64) -> Result<()> {
        self.same_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Derivative along one axis: second-order central stencils in the
    /// interior, one-sided second-order at the boundary nodes.
    pub fn derivative(&self, axis: usize) -> GridField {
        let g = &self.grid;
        let n = g.axis_nodes(axis);
        let h = g.spacing(axis);
        let stride = if axis == 0 { 1 } else { g.axis_nodes(0) };
        let mut out = vec![0.0; self.values.len()];
        for idx in 0..self.values.len() {
            let mi = g.multi_index(idx);
            let i = mi[axis];
            let v = &self.values;
            out[idx] = if i == 0 {
                (-3.0 * v[idx] + 4.0 * v[idx + stride] - v[idx + 2 * stride]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[idx] - 4.0 * v[idx - stride] + v[idx - 2 * stride]) / (2.0 * h)
            } else {
                (v[idx + stride] - v[idx - stride]) / (2.0 * h)
            };
        }
        GridField {
            grid: self.grid,
            values: out,
        }
    }

    /// Second derivative along one axis, second-order stencils throughout
    /// (one-sided at the boundary when at least 4 nodes are available).
    pub fn second_derivative(&self, axis: usize) -> GridField {
        let g = &self.grid;
        let n = g.axis_nodes(axis);
        let h2 = g.spacing(axis) * g.spacing(axis);
        let stride = if axis == 0 { 1 } else { g.axis_nodes(0) };
        let mut out = vec![0.0; self.values.len()];
        let v = &self.values;
        for idx in 0..v.len() {
            let mi = g.multi_index(idx);
            let i = mi[axis];
            out[idx] = if i > 0 && i < n - 1 {
                (v[idx - stride] - 2.0 * v[idx] + v[idx + stride]) / h2
            } else if n >= 4 {
                if i == 0 {
                    (2.0 * v[idx] - 5.0 * v[idx + stride] + 4.0 * v[idx + 2 * stride]
                        - v[idx + 3 * stride])
                        / h2
                } else {
                    (2.0 * v[idx] - 5.0 * v[idx - stride] + 4.0 * v[idx - 2 * stride]
                        - v[idx - 3 * stride])
                        / h2
                }
            } else if n == 3 {
                let base = idx as isize - (i as isize) * stride as isize;
                let b = base as usize;
                (v[b] - 2.0 * v[b + stride] + v[b + 2 * stride]) / h2
            } else {
                0.0
            };
        }
        GridField {
            grid: self.grid,
            values: out,
        }
    }

    pub fn gradient(&self) -> GridVectorField {
        let components = (0..self.grid.dim()).map(|a| self.derivative(a)).collect();
        GridVectorField {
            grid: self.grid,
            components,
        }
    }

    /// Hessian as a `dim x dim` matrix of fields; mixed entries are computed
    /// by composing first-derivative stencils (exactly symmetric on a tensor
    /// grid), diagonal entries by the dedicated second-difference stencil.
    pub fn hessian(&self) -> Vec<Vec<GridField>> {
        let d = self.grid.dim();
        let mut rows = Vec::with_capacity(d);
        for a in 0..d {
            let mut row = Vec::with_capacity(d);
            for b in 0..d {
                if a == b {
                    row.push(self.second_derivative(a));
                } else {
                    row.push(self.derivative(a).derivative(b));
                }
            }
            rows.push(row);
        }
        rows
    }

    /// Multilinear interpolation at an arbitrary point, clamped to the domain.
    pub fn sample(&self, point: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..d {
            let [lo, hi] = g.domain(a);
            let x = point[a].clamp(lo, hi);
            let t = (x - lo) / g.spacing(a);
            let mut i = t.floor() as usize;
            if i >= g.axis_nodes(a) - 1 {
                i = g.axis_nodes(a) - 2;
            }
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        if d == 1 {
            let v0 = self.values[base[0]];
            let v1 = self.values[base[0] + 1];
            v0 + frac[0] * (v1 - v0)
        } else {
            let i00 = g.linear_index(base[0], base[1]);
            let i10 = g.linear_index(base[0] + 1, base[1]);
            let i01 = g.linear_index(base[0], base[1] + 1);
            let i11 = g.linear_index(base[0] + 1, base[1] + 1);
            let (tx, ty) = (frac[0], frac[1]);
            let v = &self.values;
            v[i00] * (1.0 - tx) * (1.0 - ty)
                + v[i10] * tx * (1.0 - ty)
                + v[i01] * (1.0 - tx) * ty
                + v[i11] * tx * ty
        }
    }

    /// Piecewise-multilinear resampling onto another grid over the same
    /// domain (the rule used between the OT grid and the PDE grid).
    pub fn resample(&self, target: &TensorGrid) -> GridField {
        let mut out = GridField::zeros(*target);
        for i in 0..target.node_count() {
            let p = target.position(i);
            out.values[i] = self.sample(&p[..target.dim()]);
        }
        out
    }
}

/// A nonnegative probability density with unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    field: GridField,
}

impl GridDensity {
    /// Validate an already-normalized field as a density.
    pub fn new(field: GridField) -> Result<Self> {
        for (i, &v) in field.values().iter().enumerate() {
            if v < 0.0 {
                return Err(Error::NegativeDensity { node: i, value: v });
            }
        }
        let mass = field.quadrature();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::NonPositiveMass(mass));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn grid(&self) -> &TensorGrid {
        self.field.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn into_field(self) -> GridField {
        self.field
    }
}

/// Normalize a nonnegative field to a probability density.
pub fn normalize_density(f: &GridField) -> Result<GridDensity> {
    normalize_density_floored(f, 0.0)
}

/// Normalization with an optional positivity floor `s >= 0`, applied as
/// `(1 - s) f / ∫f + s` before renormalization.
pub fn normalize_density_floored(f: &GridField, floor: f64) -> Result<GridDensity> {
    if floor < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "density floor must be nonnegative, got {floor}"
        )));
    }
    for (i, &v) in f.values().iter().enumerate() {
        if v < 0.0 {
            return Err(Error::NegativeDensity { node: i, value: v });
        }
    }
    let mass = f.quadrature();
    if mass <= 0.0 {
        return Err(Error::NonPositiveMass(mass));
    }
    let mut g = f.map(|v| (1.0 - floor) * v / mass + floor);
    let total = g.quadrature();
    if total <= 0.0 {
        return Err(Error::NonPositiveMass(total));
    }
    g.scale(1.0 / total);
    GridDensity::new(g)
}

/// A vector field with one component per grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    grid: TensorGrid,
    components: Vec<GridField>,
}

impl GridVectorField {
    pub fn new(grid: TensorGrid, components: Vec<GridField>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            if *c.grid() != grid {
                return Err(Error::GridMismatch);
            }
        }
        Ok(Self { grid, components })
    }

    pub fn identity(grid: TensorGrid) -> Self {
        let components = (0..grid.dim())
            .map(|a| GridField::from_fn(grid, |p| p[a]))
            .collect();
        Self { grid, components }
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &GridField {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut GridField {
        &mut self.components[axis]
    }

    pub fn components(&self) -> &[GridField] {
        &self.components
    }

    /// Value at node `idx` as a fixed-size vector (second entry 0 in 1D).
    pub fn at(&self, idx: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.values()[idx];
        }
        v
    }

    /// `∫ |F - G|^2 w` with a nodal weight field.
    pub fn weighted_l2_distance_sq(&self, other: &GridVectorField, weight: &GridField) -> Result<f64> {
        if self.grid != other.grid || *weight.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        let mut acc = 0.0;
        for i in 0..self.grid.node_count() {
            let a = self.at(i);
            let b = other.at(i);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            acc += self.grid.quad_weight(i) * weight.values()[i] * d2;
        }
        Ok(acc)
    }
}

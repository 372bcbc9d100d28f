//! Bilinear finite elements on 2D tensor grids: assembly of (possibly
//! coefficient-mapped) bilinear forms, Dirichlet solves, and the
//! implicit-midpoint time stepper for the nonlinear advection-diffusion
//! problem.  All matrices are stored in banded form; the bandwidth of a
//! grid with `n0` nodes along the fast axis is `n0 + 1`.

use rayon::prelude::*;

use crate::error::Error;
use crate::grid::{GridField, GridVectorField, TensorGrid};
use crate::linalg::{conjugate_gradient, BandMatrix};
use crate::Result;

/// Gauss points of the 2-point rule on [-1, 1].
const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Bilinear nodal finite-element space on a 2D tensor grid, with an
/// optional Dirichlet mask over the nodes.
#[derive(Debug, Clone)]
pub struct FemSpace {
    grid: TensorGrid,
    dirichlet: Vec<bool>,
}

impl FemSpace {
    /// Space without essential boundary conditions.
    pub fn new(grid: TensorGrid) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::InvalidDimension(grid.dim()));
        }
        let n = grid.node_count();
        Ok(FemSpace {
            grid,
            dirichlet: vec![false; n],
        })
    }

    /// Space with homogeneous Dirichlet conditions on all boundary nodes.
    pub fn with_dirichlet_boundary(grid: TensorGrid) -> Result<Self> {
        let mut space = FemSpace::new(grid)?;
        for i in 0..space.grid.node_count() {
            space.dirichlet[i] = space.grid.is_boundary(i);
        }
        Ok(space)
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Number of unconstrained degrees of freedom.
    pub fn free_dof_count(&self) -> usize {
        self.dirichlet.iter().filter(|&&d| !d).count()
    }

    /// Band half-width of all assembled matrices.
    pub fn bandwidth(&self) -> usize {
        self.grid.axis_nodes(0) + 1
    }

    fn empty_matrix(&self) -> BandMatrix {
        let n = self.grid.node_count();
        let b = self.bandwidth();
        BandMatrix::new(n, b, b)
    }

    /// Nearest grid node to a physical point (for diagnostics).
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let g = &self.grid;
        let mut idx = [0usize; 2];
        for a in 0..2 {
            let [lo, hi] = g.domain(a);
            let t = ((p[a] - lo) / g.spacing(a)).round();
            let max = ((hi - lo) / g.spacing(a)).round() as usize;
            idx[a] = (t.max(0.0) as usize).min(max);
        }
        g.linear_index(idx[0], idx[1])
    }
}

/// Pointwise coefficients of a general second-order bilinear form
/// `(diff grad u) . grad v + (adv . grad u) v + mass u v`.
#[derive(Debug, Clone, Copy)]
pub struct QuadCoeff {
    pub diff: [[f64; 2]; 2],
    pub adv: [f64; 2],
    pub mass: f64,
}

impl QuadCoeff {
    pub fn diffusion_identity() -> Self {
        QuadCoeff {
            diff: [[1.0, 0.0], [0.0, 1.0]],
            adv: [0.0, 0.0],
            mass: 0.0,
        }
    }

    pub fn mass_only() -> Self {
        QuadCoeff {
            diff: [[0.0; 2]; 2],
            adv: [0.0, 0.0],
            mass: 1.0,
        }
    }
}

#[inline]
fn shape(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    // Local node a = a0 + 2*a1 sits at (xi_a, eta_a) = (2*a0-1, 2*a1-1).
    let mut n = [0.0; 4];
    let mut dxi = [0.0; 4];
    let mut deta = [0.0; 4];
    for a in 0..4 {
        let sa = if a & 1 == 0 { -1.0 } else { 1.0 };
        let ta = if a & 2 == 0 { -1.0 } else { 1.0 };
        n[a] = 0.25 * (1.0 + sa * xi) * (1.0 + ta * eta);
        dxi[a] = 0.25 * sa * (1.0 + ta * eta);
        deta[a] = 0.25 * ta * (1.0 + sa * xi);
    }
    (n, dxi, deta)
}

/// Assemble a general bilinear form with pointwise coefficients supplied
/// by a closure of the quadrature point (and its nearest node, for error
/// reporting).
pub fn assemble_operator(
    space: &FemSpace,
    coeff: impl Fn([f64; 2], usize) -> Result<QuadCoeff>,
) -> Result<BandMatrix> {
    let g = space.grid();
    let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let (x0, y0) = (g.domain(0)[0], g.domain(1)[0]);
    let w = hx * hy / 4.0;
    let mut m = space.empty_matrix();
    for cy in 0..n1 - 1 {
        for cx in 0..n0 - 1 {
            let nodes = [
                g.linear_index(cx, cy),
                g.linear_index(cx + 1, cy),
                g.linear_index(cx, cy + 1),
                g.linear_index(cx + 1, cy + 1),
            ];
            for &eta in &GAUSS {
                for &xi in &GAUSS {
                    let (n, dxi, deta) = shape(xi, eta);
                    let p = [
                        x0 + (cx as f64 + (xi + 1.0) / 2.0) * hx,
                        y0 + (cy as f64 + (eta + 1.0) / 2.0) * hy,
                    ];
                    let c = coeff(p, space.nearest_node(p))?;
                    let mut gx = [0.0; 4];
                    let mut gy = [0.0; 4];
                    for a in 0..4 {
                        gx[a] = dxi[a] * 2.0 / hx;
                        gy[a] = deta[a] * 2.0 / hy;
                    }
                    for i in 0..4 {
                        for j in 0..4 {
                            let diff = (c.diff[0][0] * gx[j] + c.diff[0][1] * gy[j]) * gx[i]
                                + (c.diff[1][0] * gx[j] + c.diff[1][1] * gy[j]) * gy[i];
                            let adv = (c.adv[0] * gx[j] + c.adv[1] * gy[j]) * n[i];
                            let mass = c.mass * n[i] * n[j];
                            m.add(nodes[i], nodes[j], w * (diff + adv + mass));
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Plain Laplace stiffness matrix (no boundary conditions applied).
pub fn assemble_stiffness(space: &FemSpace) -> BandMatrix {
    assemble_operator(space, |_, _| Ok(QuadCoeff::diffusion_identity()))
        .expect("constant-coefficient assembly cannot fail")
}

/// Mass matrix.
pub fn assemble_mass(space: &FemSpace) -> BandMatrix {
    assemble_operator(space, |_, _| Ok(QuadCoeff::mass_only()))
        .expect("constant-coefficient assembly cannot fail")
}

/// Constant-velocity advection matrix `(a . grad u, v)`.
pub fn assemble_advection(space: &FemSpace, velocity: [f64; 2]) -> BandMatrix {
    assemble_operator(space, |_, _| {
        Ok(QuadCoeff {
            diff: [[0.0; 2]; 2],
            adv: velocity,
            mass: 0.0,
        })
    })
    .expect("constant-coefficient assembly cannot fail")
}

/// Load vector `(f, v)`.
pub fn assemble_load(space: &FemSpace, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let g = space.grid();
    let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let (x0, y0) = (g.domain(0)[0], g.domain(1)[0]);
    let w = hx * hy / 4.0;
    let mut b = vec![0.0; g.node_count()];
    for cy in 0..n1 - 1 {
        for cx in 0..n0 - 1 {
            let nodes = [
                g.linear_index(cx, cy),
                g.linear_index(cx + 1, cy),
                g.linear_index(cx, cy + 1),
                g.linear_index(cx + 1, cy + 1),
            ];
            for &eta in &GAUSS {
                for &xi in &GAUSS {
                    let (n, _, _) = shape(xi, eta);
                    let p = [
                        x0 + (cx as f64 + (xi + 1.0) / 2.0) * hx,
                        y0 + (cy as f64 + (eta + 1.0) / 2.0) * hy,
                    ];
                    let fv = f(p);
                    for i in 0..4 {
                        b[nodes[i]] += w * fv * n[i];
                    }
                }
            }
        }
    }
    b
}

/// Boundary-normal coupling `int_boundary (grad u . n) v ds`, used by the
/// penalized H1 projection of transport potentials.
pub fn boundary_normal_matrix(space: &FemSpace) -> BandMatrix {
    let g = space.grid();
    let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let mut m = space.empty_matrix();
    // Each side integrates over its boundary edges with 2-point Gauss; the
    // normal derivative couples to all four nodes of the adjacent cell,
    // while the test function is supported on the two edge nodes only.
    // side encoding: (axis along the edge, fixed index, outward normal sign)
    let sides = [
        (0usize, 0usize, -1.0f64),  // bottom: y fixed at 0, n = (0,-1)
        (0, n1 - 1, 1.0),           // top
        (1, 0, -1.0),               // left: x fixed at 0, n = (-1,0)
        (1, n0 - 1, 1.0),           // right
    ];
    for &(axis, fixed, sign) in &sides {
        let (len_nodes, h_edge) = if axis == 0 { (n0, hx) } else { (n1, hy) };
        for e in 0..len_nodes - 1 {
            // Adjacent cell indices and the reference coordinate pinned to
            // the boundary face of that cell.
            let (cx, cy, eta_fix_is_eta) = if axis == 0 {
                let cy = if fixed == 0 { 0 } else { n1 - 2 };
                (e, cy, true)
            } else {
                let cx = if fixed == 0 { 0 } else { n0 - 2 };
                (cx, e, false)
            };
            let nodes = [
                g.linear_index(cx, cy),
                g.linear_index(cx + 1, cy),
                g.linear_index(cx, cy + 1),
                g.linear_index(cx + 1, cy + 1),
            ];
            for &t in &GAUSS {
                let (xi, eta) = if eta_fix_is_eta {
                    (t, if fixed == 0 { -1.0 } else { 1.0 })
                } else {
                    (if fixed == 0 { -1.0 } else { 1.0 }, t)
                };
                let (n, dxi, deta) = shape(xi, eta);
                let w = h_edge / 2.0;
                for i in 0..4 {
                    if n[i] == 0.0 {
                        continue;
                    }
                    for j in 0..4 {
                        let dn = if eta_fix_is_eta {
                            sign * deta[j] * 2.0 / hy
                        } else {
                            sign * dxi[j] * 2.0 / hx
                        };
                        m.add(nodes[i], nodes[j], w * n[i] * dn);
                    }
                }
            }
        }
    }
    m
}

/// Stiffness form with the pulled-back Laplace coefficient
/// `J^{-1} J^{-T} |det J|` where `J` is the nodal Jacobian of the inverse
/// mapping (entries row-major `[j00, j01, j10, j11]`), interpolated
/// bilinearly at quadrature points.
pub fn assemble_mapped_stiffness(space: &FemSpace, jac: &[GridField]) -> Result<BandMatrix> {
    assert_eq!(jac.len(), 4, "expected four Jacobian entry fields");
    assemble_operator(space, |p, node| {
        let j00 = jac[0].sample(&p);
        let j01 = jac[1].sample(&p);
        let j10 = jac[2].sample(&p);
        let j11 = jac[3].sample(&p);
        let det = j00 * j11 - j01 * j10;
        if det <= 0.0 {
            return Err(Error::NonPositiveDeterminant { node, det });
        }
        // J^{-1} J^{-T} |det J| = (adj J)(adj J)^T / det.
        let adj = [[j11, -j01], [-j10, j00]];
        let mut k = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                k[r][c] = (adj[r][0] * adj[c][0] + adj[r][1] * adj[c][1]) / det;
            }
        }
        Ok(QuadCoeff {
            diff: k,
            adv: [0.0, 0.0],
            mass: 0.0,
        })
    })
}

/// Load vector of the pulled-back source: `int v(y) f(inverse_map(y)) det(y) dy`.
pub fn assemble_mapped_rhs(
    space: &FemSpace,
    f: impl Fn([f64; 2]) -> f64,
    inverse_map: &GridVectorField,
    det: &GridField,
) -> Result<Vec<f64>> {
    let g = space.grid();
    let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let (x0, y0) = (g.domain(0)[0], g.domain(1)[0]);
    let w = hx * hy / 4.0;
    let mut b = vec![0.0; g.node_count()];
    for cy in 0..n1 - 1 {
        for cx in 0..n0 - 1 {
            let nodes = [
                g.linear_index(cx, cy),
                g.linear_index(cx + 1, cy),
                g.linear_index(cx, cy + 1),
                g.linear_index(cx + 1, cy + 1),
            ];
            for &eta in &GAUSS {
                for &xi in &GAUSS {
                    let (n, _, _) = shape(xi, eta);
                    let p = [
                        x0 + (cx as f64 + (xi + 1.0) / 2.0) * hx,
                        y0 + (cy as f64 + (eta + 1.0) / 2.0) * hy,
                    ];
                    let d = det.sample(&p);
                    if d <= 0.0 {
                        return Err(Error::NonPositiveDeterminant {
                            node: space.nearest_node(p),
                            det: d,
                        });
                    }
                    let x = [
                        inverse_map.component(0).sample(&p),
                        inverse_map.component(1).sample(&p),
                    ];
                    let fv = f(x) * d;
                    for i in 0..4 {
                        b[nodes[i]] += w * fv * n[i];
                    }
                }
            }
        }
    }
    Ok(b)
}

/// Matvec that enforces the space's homogeneous Dirichlet mask: masked
/// entries act as identity rows/columns.
fn masked_apply(matrix: &BandMatrix, mask: &[bool], x: &[f64], y: &mut [f64]) {
    let mut xf = x.to_vec();
    for (v, &m) in xf.iter_mut().zip(mask) {
        if m {
            *v = 0.0;
        }
    }
    let ax = matrix.matvec(&xf);
    for i in 0..x.len() {
        y[i] = if mask[i] { x[i] } else { ax[i] };
    }
}

/// Conjugate-gradient solve of an SPD system with the space's Dirichlet
/// mask applied (masked dofs forced to zero).
pub fn solve_dirichlet(space: &FemSpace, matrix: &BandMatrix, rhs: &[f64]) -> Result<GridField> {
    let n = space.grid().node_count();
    assert_eq!(rhs.len(), n);
    let mask = space.dirichlet_mask();
    let mut b = rhs.to_vec();
    for (v, &m) in b.iter_mut().zip(mask) {
        if m {
            *v = 0.0;
        }
    }
    let x = conjugate_gradient(
        |x, y| masked_apply(matrix, mask, x, y),
        &b,
        None,
        1e-10,
        10 * n,
    )?;
    GridField::new(space.grid().clone(), x)
}

/// Zero rows and columns of masked dofs and put ones on their diagonal
/// (used before banded LU factorization in the Newton solver).
pub fn apply_dirichlet_rows(matrix: &mut BandMatrix, mask: &[bool]) {
    let n = mask.len();
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let lo = i.saturating_sub(matrix.lower_bandwidth());
        let hi = (i + matrix.upper_bandwidth()).min(n - 1);
        for j in lo..=hi {
            matrix.set(i, j, 0.0);
            matrix.set(j, i, 0.0);
        }
        matrix.set(i, i, 1.0);
    }
}

/// Project an assembled operator onto test/trial vector sets:
/// entry (i, j) = test_i^T A trial_j.
pub fn reduced_form(matrix: &BandMatrix, test: &[Vec<f64>], trial: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; test.len() * trial.len()];
    for (j, t) in trial.iter().enumerate() {
        let at = matrix.matvec(t);
        for (i, s) in test.iter().enumerate() {
            out[i * trial.len() + j] = s.iter().zip(&at).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Parametric Poisson problem: `-Delta u = f_mu` with a narrow Gaussian
/// source centred at `(1/2, 1/2) + mu` and homogeneous Dirichlet data.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PoissonProblem {
    /// Variance of the Gaussian source.
    pub variance: f64,
    /// Half-width of the square parameter box around the origin.
    pub box_half: f64,
}

impl Default for PoissonProblem {
    fn default() -> Self {
        PoissonProblem {
            variance: 1e-3,
            box_half: 0.35,
        }
    }
}

impl PoissonProblem {
    /// Normalized Gaussian source for parameter `mu`.
    pub fn source(&self, mu: [f64; 2]) -> impl Fn([f64; 2]) -> f64 + '_ {
        let c = [0.5 + mu[0], 0.5 + mu[1]];
        let var = self.variance;
        move |x: [f64; 2]| {
            let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            (-d2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
        }
    }

    /// Uniform parameter samples in the box, reproducible from the seed.
    pub fn sample_parameters(&self, count: usize, seed: u64) -> Vec<[f64; 2]> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                [
                    rng.gen_range(-self.box_half..self.box_half),
                    rng.gen_range(-self.box_half..self.box_half),
                ]
            })
            .collect()
    }

    /// High-fidelity solve at one parameter.
    pub fn solve(&self, space: &FemSpace, mu: [f64; 2]) -> Result<GridField> {
        let a = assemble_stiffness(space);
        let b = assemble_load(space, self.source(mu));
        solve_dirichlet(space, &a, &b)
    }

    /// High-fidelity solves at many parameters (parallel, deterministic).
    pub fn snapshot_sweep(&self, space: &FemSpace, mus: &[[f64; 2]]) -> Result<Vec<GridField>> {
        let a = assemble_stiffness(space);
        mus.par_iter()
            .map(|&mu| {
                let b = assemble_load(space, self.source(mu));
                solve_dirichlet(space, &a, &b)
            })
            .collect()
    }
}

/// Nonlinear advection-diffusion problem
/// `u_t + a(alpha) . grad(u + gamma u^2) = beta Laplace u`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdvectionProblem {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub init_center: [f64; 2],
    pub init_variance: f64,
}

impl AdvectionProblem {
    pub fn new(alpha: f64) -> Self {
        AdvectionProblem {
            alpha,
            gamma: 1e-2,
            beta: 1e-3,
            dt: 5e-2,
            init_center: [0.5, 0.5],
            init_variance: 5e-3,
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.alpha.cos() / 5.0, self.alpha.sin() / 5.0]
    }

    /// Normalized Gaussian initial condition (unit mass, so the solution
    /// can double as a transport density).
    pub fn initial_field(&self, grid: &TensorGrid) -> GridField {
        let c = self.init_center;
        let var = self.init_variance;
        GridField::from_fn(grid.clone(), |x| {
            let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            (-d2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
        })
    }
}

/// Preassembled operators for repeated implicit-midpoint steps.
pub struct AdvectionStepper<'a> {
    space: &'a FemSpace,
    problem: AdvectionProblem,
    mass: BandMatrix,
    linear: BandMatrix, // advection + beta * stiffness
}

impl<'a> AdvectionStepper<'a> {
    pub fn new(space: &'a FemSpace, problem: AdvectionProblem) -> Self {
        let mass = assemble_mass(space);
        let vel = problem.velocity();
        let mut linear = assemble_advection(space, vel);
        let stiff = assemble_stiffness(space);
        let n = space.grid().node_count();
        let bw = space.bandwidth();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw).min(n - 1);
            for j in lo..=hi {
                let v = stiff.get(i, j);
                if v != 0.0 {
                    linear.add(i, j, problem.beta * v);
                }
            }
        }
        AdvectionStepper {
            space,
            problem,
            mass,
            linear,
        }
    }

    pub fn problem(&self) -> &AdvectionProblem {
        &self.problem
    }

    /// Mass matrix (no boundary conditions applied).
    pub fn mass(&self) -> &BandMatrix {
        &self.mass
    }

    /// Linear operator `advection + beta * stiffness` (no boundary
    /// conditions applied).
    pub fn linear(&self) -> &BandMatrix {
        &self.linear
    }

    /// Nonlinear advection vector `int (a . grad(u_h^2)) v` and, when
    /// requested, its Jacobian.
    pub fn nonlinear(&self, u: &[f64], with_jacobian: bool) -> (Vec<f64>, Option<BandMatrix>) {
        let g = self.space.grid();
        let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        let w = hx * hy / 4.0;
        let a = self.problem.velocity();
        let mut vec = vec![0.0; g.node_count()];
        let mut jac = with_jacobian.then(|| {
            let bw = self.space.bandwidth();
            BandMatrix::new(g.node_count(), bw, bw)
        });
        for cy in 0..n1 - 1 {
            for cx in 0..n0 - 1 {
                let nodes = [
                    g.linear_index(cx, cy),
                    g.linear_index(cx + 1, cy),
                    g.linear_index(cx, cy + 1),
                    g.linear_index(cx + 1, cy + 1),
                ];
                for &eta in &GAUSS {
                    for &xi in &GAUSS {
                        let (n, dxi, deta) = shape(xi, eta);
                        let mut gx = [0.0; 4];
                        let mut gy = [0.0; 4];
                        for k in 0..4 {
                            gx[k] = dxi[k] * 2.0 / hx;
                            gy[k] = deta[k] * 2.0 / hy;
                        }
                        let mut uh = 0.0;
                        let mut ugx = 0.0;
                        let mut ugy = 0.0;
                        for k in 0..4 {
                            let uv = u[nodes[k]];
                            uh += uv * n[k];
                            ugx += uv * gx[k];
                            ugy += uv * gy[k];
                        }
                        // a . grad(u^2) = 2 u (a . grad u)
                        let adv_u = a[0] * ugx + a[1] * ugy;
                        let val = 2.0 * uh * adv_u;
                        for i in 0..4 {
                            vec[nodes[i]] += w * val * n[i];
                        }
                        if let Some(j) = jac.as_mut() {
                            for i in 0..4 {
                                for k in 0..4 {
                                    let d = 2.0
                                        * (n[k] * adv_u + uh * (a[0] * gx[k] + a[1] * gy[k]));
                                    j.add(nodes[i], nodes[k], w * d * n[i]);
                                }
                            }
                        }
                    }
                }
            }
        }
        (vec, jac)
    }

    fn residual(&self, u0: &[f64], u1: &[f64], dt: f64) -> Vec<f64> {
        let n = u0.len();
        let um: Vec<f64> = u0.iter().zip(u1).map(|(a, b)| 0.5 * (a + b)).collect();
        let du: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
        let mdu = self.mass.matvec(&du);
        let lum = self.linear.matvec(&um);
        let (nl, _) = self.nonlinear(&um, false);
        let mask = self.space.dirichlet_mask();
        let mut g = vec![0.0; n];
        for i in 0..n {
            g[i] = if mask[i] {
                u1[i]
            } else {
                mdu[i] + dt * (lum[i] + self.problem.gamma * nl[i])
            };
        }
        g
    }

    /// One implicit-midpoint step of size `dt`.  Newton on the midpoint
    /// residual to 1e-10 (25 iterations max); two failed halvings of the
    /// Newton step trigger a Picard fallback before giving up.
    pub fn step(&self, u0: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = u0.len();
        assert_eq!(n, self.space.grid().node_count());
        let mask = self.space.dirichlet_mask();
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        // Residual scale: mass-matrix action on the current state.
        let scale = 1.0 + inf(&self.mass.matvec(u0));
        let tol = 1e-10 * scale;

        let mut u1 = u0.to_vec();
        for (v, &m) in u1.iter_mut().zip(mask) {
            if m {
                *v = 0.0;
            }
        }
        let mut g = self.residual(u0, &u1, dt);
        let mut gnorm = inf(&g);
        let mut failed_searches = 0usize;
        for _ in 0..25 {
            if gnorm <= tol {
                return Ok(u1);
            }
            // Newton matrix at the midpoint state.
            let um: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
            let (_, jac_nl) = self.nonlinear(&um, true);
            let jac_nl = jac_nl.expect("jacobian requested");
            let bw = self.space.bandwidth();
            let mut j = BandMatrix::new(n, bw, bw);
            for i in 0..n {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(n - 1);
                for c in lo..=hi {
                    let v = self.mass.get(i, c)
                        + 0.5
                            * dt
                            * (self.linear.get(i, c) + self.problem.gamma * jac_nl.get(i, c));
                    if v != 0.0 {
                        j.set(i, c, v);
                    }
                }
            }
            apply_dirichlet_rows(&mut j, mask);
            let lu = j.factor()?;
            let delta = lu.solve(&g);
            // Backtracking line search on the residual norm.
            let mut step_size = 1.0;
            let mut accepted = false;
            for _ in 0..3 {
                let trial: Vec<f64> = u1
                    .iter()
                    .zip(&delta)
                    .map(|(u, d)| u - step_size * d)
                    .collect();
                let gt = self.residual(u0, &trial, dt);
                let gt_norm = inf(&gt);
                if gt_norm < gnorm || gt_norm <= tol {
                    u1 = trial;
                    g = gt;
                    gnorm = gt_norm;
                    accepted = true;
                    break;
                }
                step_size /= 2.0;
            }
            if !accepted {
                failed_searches += 1;
                if failed_searches >= 2 {
                    return self.picard_step(u0, dt, tol);
                }
                // Take the damped step anyway and continue.
                for (u, d) in u1.iter_mut().zip(&delta) {
                    *u -= step_size * d;
                }
                g = self.residual(u0, &u1, dt);
                gnorm = inf(&g);
            }
        }
        if gnorm <= tol {
            Ok(u1)
        } else {
            Err(Error::NewtonNonConvergence(25))
        }
    }

    /// Picard fallback: lag the nonlinear term, solve the linear implicit
    /// system each sweep.
    fn picard_step(&self, u0: &[f64], dt: f64, tol: f64) -> Result<Vec<f64>> {
        let n = u0.len();
        let mask = self.space.dirichlet_mask();
        let bw = self.space.bandwidth();
        let mut a = BandMatrix::new(n, bw, bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw).min(n - 1);
            for c in lo..=hi {
                let v = self.mass.get(i, c) + 0.5 * dt * self.linear.get(i, c);
                if v != 0.0 {
                    a.set(i, c, v);
                }
            }
        }
        apply_dirichlet_rows(&mut a, mask);
        let lu = a.factor()?;
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut u1 = u0.to_vec();
        for _ in 0..200 {
            let um: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
            let (nl, _) = self.nonlinear(&um, false);
            let mu0 = self.mass.matvec(u0);
            let lu0 = self.linear.matvec(u0);
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                rhs[i] = if mask[i] {
                    0.0
                } else {
                    mu0[i] - 0.5 * dt * lu0[i] - dt * self.problem.gamma * nl[i]
                };
            }
            let next = lu.solve(&rhs);
            u1 = next;
            let g = self.residual(u0, &u1, dt);
            if inf(&g) <= tol {
                return Ok(u1);
            }
        }
        Err(Error::NewtonNonConvergence(25))
    }

    /// Trajectory from the problem's initial condition: fields at
    /// `t = 0, dt, ..., horizon` (inclusive).
    pub fn trajectory(&self, horizon: f64) -> Result<Vec<GridField>> {
        let grid = self.space.grid().clone();
        let steps = (horizon / self.problem.dt).round() as usize;
        let mut out = Vec::with_capacity(steps + 1);
        let mut u = self.problem.initial_field(&grid).into_values();
        let mask = self.space.dirichlet_mask();
        for (v, &m) in u.iter_mut().zip(mask) {
            if m {
                *v = 0.0;
            }
        }
        out.push(GridField::new(grid.clone(), u.clone())?);
        for _ in 0..steps {
            u = self.step(&u, self.problem.dt)?;
            out.push(GridField::new(grid.clone(), u.clone())?);
        }
        Ok(out)
    }
}

/// Snapshot sweep for the advection problem: one trajectory per angle
/// over `[0, t_train]`, all fields recorded.
pub fn advection_snapshot_sweep(
    space: &FemSpace,
    alphas: &[f64],
    t_train: f64,
) -> Result<Vec<(f64, Vec<GridField>)>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let stepper = AdvectionStepper::new(space, AdvectionProblem::new(alpha));
            Ok((alpha, stepper.trajectory(t_train)?))
        })
        .collect()
}

/// Second-order finite-difference time derivative of a sampled series
/// (centred in the interior, one-sided at the ends).
pub fn centered_time_derivative(series: &[f64], dt: f64) -> Vec<f64> {
    let n = series.len();
    assert!(n >= 3, "need at least three samples");
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt);
    for i in 1..n - 1 {
        d[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / (2.0 * dt);
    d
}

//! Offline/online reduced-order pipeline: snapshot generation, density
//! registration through entropic transport, reference-domain reduced bases,
//! hyper-reduced mapped operators, and the online solvers with error
//! reporting against high fidelity.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eim::{contract_tensor, eim_construct, eim_reduced_tensor, EimBasis};
use crate::error::Error;
use crate::fem::{
    assemble_mass, assemble_operator, assemble_stiffness, AdvectionProblem,
    AdvectionStepper, FemSpace, PoissonProblem, QuadCoeff,
};
use crate::gp::{embed_angle, gp_fit, gp_predict, GpModel};
use crate::grid::{
    normalize_density, normalize_density_floored, GridDensity, GridField, TensorGrid,
};
use crate::linalg::{BandMatrix, DenseLu};
use crate::ot::{sinkhorn_self_solve, sinkhorn_solve, SinkhornConfig};
use crate::pod::{pod_from_correlation, CorrelationMatrix, PodBasis};
use crate::registration::{
    boundary_consistent_hessian, build_inverse_map_projected, build_transport_modes,
    default_inversion_epsilon, h1_boundary_projection,
    invert_map, MongeEmbeddingSet, ProjectionConfig, TransportModes,
};
use crate::Result;

/// Version stamp written into artifact manifests.
pub const ARTIFACT_VERSION: u32 = 1;

/// How snapshot fields are turned into transport densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityStrategy {
    /// `rho ∝ u²` (strictly positive in practice; debiasing recommended).
    SolutionSquared,
    /// `rho ∝ f_mu` (the source itself).
    Source,
    /// `rho ∝ u` (with an optional positivity floor).
    Solution,
}

/// Pipeline configuration shared by both model problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RomOptions {
    /// Entropic regularization of the transport solves.
    pub epsilon: f64,
    /// POD energy tolerance for both transport modes and the reference basis.
    pub tau: f64,
    /// POD energy tolerance for the hyper-reduction bases.
    pub tau_eim: f64,
    /// Snapshot-to-density rule.
    pub density: DensityStrategy,
    /// Debias the barycenter and the transport maps.
    pub debias: bool,
    /// Positivity floor applied when normalizing densities.
    pub floor: f64,
    /// Transport-grid refinement relative to the PDE grid (cells per cell).
    pub ot_refine: usize,
    /// Seed for training/test parameter draws.
    pub seed: u64,
    /// Force the number of transport modes instead of using `tau`.
    pub mode_rank: Option<usize>,
    /// Force the reference-basis size instead of using `tau`.
    pub basis_rank: Option<usize>,
    /// Size of the unregistered comparison basis (default `n_m + m`).
    pub plain_rank: Option<usize>,
}

impl RomOptions {
    /// Defaults for the elliptic experiment.
    pub fn poisson_defaults() -> Self {
        RomOptions {
            epsilon: 1e-2,
            tau: 1e-4,
            tau_eim: 1e-5,
            density: DensityStrategy::SolutionSquared,
            debias: true,
            floor: 0.0,
            ot_refine: 3,
            seed: 0,
            mode_rank: None,
            basis_rank: None,
            plain_rank: None,
        }
    }

    /// Defaults for the nonlinear advection experiment.
    pub fn advection_defaults() -> Self {
        RomOptions {
            epsilon: 1e-2,
            tau: 1e-3,
            tau_eim: 1e-3,
            density: DensityStrategy::Solution,
            debias: false,
            floor: 1e-2,
            ot_refine: 3,
            seed: 0,
            mode_rank: Some(3),
            basis_rank: Some(5),
            plain_rank: Some(24),
        }
    }
}

/// Which model problem the artifacts were trained for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ProblemSpec {
    Poisson {
        problem: PoissonProblem,
        /// Nodes per axis of the PDE grid.
        grid_nodes: usize,
        /// Number of training snapshots.
        n_s: usize,
    },
    Advection {
        /// Base configuration; the angle is overridden per trajectory.
        base: AdvectionProblem,
        grid_nodes: usize,
        /// Number of training angles (evenly spaced on the circle).
        n_alpha: usize,
        /// Training time horizon.
        t_train: f64,
    },
}

impl ProblemSpec {
    pub fn grid_nodes(&self) -> usize {
        match self {
            ProblemSpec::Poisson { grid_nodes, .. } => *grid_nodes,
            ProblemSpec::Advection { grid_nodes, .. } => *grid_nodes,
        }
    }
}

/// All scalar tolerances baked into a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToleranceSet {
    pub epsilon: f64,
    pub tau: f64,
    pub tau_eim: f64,
    pub floor: f64,
    /// Squared inverse length scale of the boundary-compatible projection.
    pub kappa2: f64,
    /// Boundary penalty of the projection.
    pub delta: f64,
    /// Fine regularization used when soft-inverting the mapping.
    pub eps_fine: f64,
}

/// Eigenvalue spectra recorded during training (descending, unnormalized).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SpectraReport {
    /// Correlation of the raw snapshots in the discrete H¹ product.
    pub snapshot: Vec<f64>,
    /// Correlation of the transport potentials (weighted gradient product).
    pub embedding: Vec<f64>,
    /// Correlation of the mapped snapshots in the discrete H¹ product.
    pub mapped: Vec<f64>,
    /// One quadrature-weighted spectrum per hyper-reduced coefficient form.
    pub forms: Vec<(String, Vec<f64>)>,
}

/// The mapped weak-form coefficients a reduced operator depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormKind {
    /// Pulled-back diffusion tensor `adj(J) adj(J)ᵀ / det J` (4 components).
    Diffusion,
    /// Pulled-back source `f(Φ⁻¹(y)) · det J` (scalar; source supplied online).
    SourceTimesDet,
    /// `det J` alone (the mapped mass weight).
    Determinant,
    /// `adj(J) · Σ_j ẇ_j ∇ξ_j` — the frame-motion advection velocity.
    FrameVelocity,
    /// `adj(J) · ā` — the pulled-back physical advection velocity.
    MappedVelocity,
}

impl FormKind {
    /// Number of stacked nodal components in a coefficient sample vector.
    pub fn components(self) -> usize {
        match self {
            FormKind::Diffusion => 4,
            FormKind::SourceTimesDet | FormKind::Determinant => 1,
            FormKind::FrameVelocity | FormKind::MappedVelocity => 2,
        }
    }
}

/// Everything needed to evaluate one coefficient form at one interpolation
/// point without touching the full grid: the point location plus the values
/// of each transport-mode gradient and Hessian there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EimPointData {
    pub node: usize,
    pub component: usize,
    pub position: [f64; 2],
    /// Per transport mode: `∇ξ_j` at the point.
    pub mode_grad: Vec<[f64; 2]>,
    /// Per transport mode: Hessian of `ξ_j` at the point, row-major.
    pub mode_hess: Vec<[f64; 4]>,
}

/// Extra online inputs a coefficient form may need besides `w`.
pub enum FormExtra<'a> {
    None,
    /// Physical source, evaluated at the pulled-back point.
    Source(&'a dyn Fn([f64; 2]) -> f64),
    /// Mode-coefficient velocities `ẇ` (frame motion).
    ModeVelocity(&'a [f64]),
    /// Constant physical velocity `ā`.
    Velocity([f64; 2]),
}

/// Lower bound applied to the inverse-map determinant wherever mapped
/// coefficients use it. The projected potentials keep the mapping
/// near-bijective, but at extreme mapping states the discrete Hessian can
/// push the determinant slightly negative at isolated nodes; flooring it
/// keeps the pulled-back coefficients bounded there and leaves
/// well-resolved states untouched.
const DET_FLOOR: f64 = 0.05;

/// Mapping state at one point for given coefficients `w`.
struct PointMap {
    det: f64,
    adj: [f64; 4],
    pullback: [f64; 2],
}

fn point_map(pd: &EimPointData, w: &[f64]) -> PointMap {
    let mut h = [0.0f64; 4];
    let mut g = [0.0f64; 2];
    for (j, &wj) in w.iter().enumerate() {
        for c in 0..4 {
            h[c] += wj * pd.mode_hess[j][c];
        }
        g[0] += wj * pd.mode_grad[j][0];
        g[1] += wj * pd.mode_grad[j][1];
    }
    let jac = [1.0 - h[0], -h[1], -h[2], 1.0 - h[3]];
    PointMap {
        det: (jac[0] * jac[3] - jac[1] * jac[2]).max(DET_FLOOR),
        adj: [jac[3], -jac[1], -jac[2], jac[0]],
        pullback: [pd.position[0] - g[0], pd.position[1] - g[1]],
    }
}

fn form_point_value(
    kind: FormKind,
    pd: &EimPointData,
    pm: &PointMap,
    extra: &FormExtra,
) -> Result<f64> {
    let a = &pm.adj;
    Ok(match kind {
        FormKind::Diffusion => {
            let k = match pd.component {
                0 => a[0] * a[0] + a[1] * a[1],
                1 | 2 => a[0] * a[2] + a[1] * a[3],
                _ => a[2] * a[2] + a[3] * a[3],
            };
            k / pm.det
        }
        FormKind::SourceTimesDet => match extra {
            FormExtra::Source(f) => f(pm.pullback) * pm.det,
            _ => panic!("source form requires a source closure"),
        },
        FormKind::Determinant => pm.det,
        FormKind::FrameVelocity => {
            let wdot = match extra {
                FormExtra::ModeVelocity(v) => v,
                _ => panic!("frame-velocity form requires mode velocities"),
            };
            let mut v = [0.0f64; 2];
            for (j, &dj) in wdot.iter().enumerate() {
                v[0] += dj * pd.mode_grad[j][0];
                v[1] += dj * pd.mode_grad[j][1];
            }
            if pd.component == 0 {
                a[0] * v[0] + a[1] * v[1]
            } else {
                a[2] * v[0] + a[3] * v[1]
            }
        }
        FormKind::MappedVelocity => {
            let ab = match extra {
                FormExtra::Velocity(v) => *v,
                _ => panic!("mapped-velocity form requires a velocity"),
            };
            if pd.component == 0 {
                a[0] * ab[0] + a[1] * ab[1]
            } else {
                a[2] * ab[0] + a[3] * ab[1]
            }
        }
    })
}

/// A hyper-reduced coefficient form: its interpolation basis, the reduced
/// operator stack (one flattened operator per interpolation function), and
/// the per-point mode data needed for grid-free online evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormReduction {
    pub kind: FormKind,
    pub basis: EimBasis,
    pub tensors: Vec<Vec<f64>>,
    pub points: Vec<EimPointData>,
}

impl FormReduction {
    /// Interpolation coefficients for the current mapping state; touches
    /// only the stored interpolation points.
    pub fn theta(&self, w: &[f64], extra: &FormExtra) -> Result<Vec<f64>> {
        let mut vals = Vec::with_capacity(self.points.len());
        for pd in &self.points {
            let pm = point_map(pd, w);
            vals.push(form_point_value(self.kind, pd, &pm, extra)?);
        }
        Ok(self.basis.coefficients(&vals))
    }

    /// Contract the reduced operator stack with interpolation coefficients.
    pub fn contract(&self, theta: &[f64]) -> Vec<f64> {
        contract_tensor(&self.tensors, theta)
    }
}

/// Problem-specific reduced operators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Forms {
    Poisson {
        stiffness: FormReduction,
        rhs: FormReduction,
    },
    Advection {
        mass: FormReduction,
        frame: FormReduction,
        advection: FormReduction,
        diffusion: FormReduction,
        /// Per advection-form interpolation function: the third-order tensor
        /// of the quadratic flux, flattened `[k·n² + i·n + l]`.
        nonlinear: Vec<Vec<f64>>,
    },
}

/// Output of the offline phase; everything the online solvers need.
#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub version: u32,
    pub problem: ProblemSpec,
    pub options: RomOptions,
    pub grid: TensorGrid,
    pub ot_grid: TensorGrid,
    /// Reference density on the transport grid.
    pub reference_density: GridDensity,
    /// The same density resampled to the PDE grid (registration weight).
    pub reference_density_pde: GridDensity,
    pub modes: TransportModes,
    /// One regression model per transport-mode coefficient.
    pub coefficient_models: Vec<GpModel>,
    /// Reference-domain reduced basis, orthonormal in the discrete H¹ product.
    pub reference_basis: Vec<GridField>,
    /// Unregistered POD basis of matched size for comparisons.
    pub plain_basis: Vec<GridField>,
    /// Regression inputs of the training snapshots.
    pub training_parameters: Vec<Vec<f64>>,
    pub forms: Forms,
    pub spectra: SpectraReport,
    pub tolerances: ToleranceSet,
    /// Stage name → seconds.
    pub timings: Vec<(String, f64)>,
}

impl OfflineArtifacts {
    pub fn mode_count(&self) -> usize {
        self.modes.mode_count()
    }

    pub fn basis_size(&self) -> usize {
        self.reference_basis.len()
    }

    /// Predicted mapping coefficients at a regression input.
    pub fn predict_coefficients(&self, input: &[f64]) -> Vec<f64> {
        self.coefficient_models
            .iter()
            .map(|m| gp_predict(m, input))
            .collect()
    }
}

/// One online solve: reduced coefficients plus the reconstructed fields.
#[derive(Debug, Clone)]
pub struct OnlineSolution {
    /// `[mu_0, mu_1]` for the elliptic problem, `[t, alpha]` for advection.
    pub parameter: Vec<f64>,
    /// Reduced coefficients in the reference basis.
    pub coefficients: Vec<f64>,
    /// Mapping coefficients `w` used for this solve.
    pub mapping_coefficients: Vec<f64>,
    /// `Σ ũ_i φ_i` on the reference domain.
    pub reference_field: GridField,
    /// Composition with the forward map, when remapped.
    pub physical_field: Option<GridField>,
    /// True when the parameter lies outside the training range.
    pub extrapolated: bool,
    /// Stage name → seconds.
    pub timings: Vec<(String, f64)>,
}

/// Per-parameter relative errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub parameter: Vec<f64>,
    pub rel_l2: f64,
    pub rel_h1: f64,
    /// Relative error of the H¹ seminorm (an energy-like scalar).
    pub rel_energy: f64,
}

/// Aggregated error metrics over a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub entries: Vec<ErrorEntry>,
    pub avg_l2: f64,
    pub max_l2: f64,
    pub min_l2: f64,
    pub avg_h1: f64,
    pub max_h1: f64,
    pub min_h1: f64,
    pub avg_energy: f64,
    pub max_energy: f64,
    pub min_energy: f64,
}

/// Triangle-inequality split of the physical-domain error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `‖u_rb∘Φ − u_hf‖` on the physical domain.
    pub physical: f64,
    /// `‖ũ_rb − u_hf∘Φ⁻¹‖` on the reference domain.
    pub reference: f64,
    /// `‖(u_hf∘Φ⁻¹)∘Φ − u_hf‖` — the map round-trip residue of the truth.
    pub remap: f64,
    /// Change-of-measure gap `‖(ũ_rb − u_hf∘Φ⁻¹)∘Φ‖ − reference`; with this
    /// definition `physical ≤ reference + remap + cross` exactly.
    pub cross: f64,
}

// ---------------------------------------------------------------------------
// norms and small dense helpers
// ---------------------------------------------------------------------------

fn l2_norm(f: &GridField) -> f64 {
    f.inner_quad(f).expect("same grid").max(0.0).sqrt()
}

fn h1_seminorm(f: &GridField) -> f64 {
    let g = f.gradient();
    let mut s = 0.0;
    for a in 0..f.grid().dim() {
        s += g.component(a).inner_quad(g.component(a)).expect("same grid");
    }
    s.max(0.0).sqrt()
}

fn diff_field(a: &GridField, b: &GridField) -> GridField {
    let mut d = a.clone();
    d.add_scaled(b, -1.0).expect("same grid");
    d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative-error triple of an approximation against a truth field.
pub fn relative_errors(approx: &GridField, truth: &GridField) -> Result<ErrorEntry> {
    approx.same_grid(truth)?;
    let d = diff_field(approx, truth);
    let l2_t = l2_norm(truth);
    let h1_t = (l2_t * l2_t + h1_seminorm(truth).powi(2)).sqrt();
    let e_t = h1_seminorm(truth);
    let l2_d = l2_norm(&d);
    let h1_d = (l2_d * l2_d + h1_seminorm(&d).powi(2)).sqrt();
    Ok(ErrorEntry {
        parameter: Vec::new(),
        rel_l2: if l2_t > 0.0 { l2_d / l2_t } else { l2_d },
        rel_h1: if h1_t > 0.0 { h1_d / h1_t } else { h1_d },
        rel_energy: if e_t > 0.0 {
            (h1_seminorm(approx) - e_t).abs() / e_t
        } else {
            h1_seminorm(approx)
        },
    })
}

/// Aggregate per-parameter errors of paired approximation/truth fields.
pub fn error_report(
    parameters: &[Vec<f64>],
    approx: &[GridField],
    truth: &[GridField],
) -> Result<ErrorReport> {
    if parameters.len() != approx.len() || approx.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "error report needs matching parameter/approximation/truth lists".into(),
        ));
    }
    let mut entries = Vec::with_capacity(approx.len());
    for ((p, a), t) in parameters.iter().zip(approx).zip(truth) {
        let mut e = relative_errors(a, t)?;
        e.parameter = p.clone();
        entries.push(e);
    }
    let agg = |f: &dyn Fn(&ErrorEntry) -> f64| -> (f64, f64, f64) {
        if entries.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let vals: Vec<f64> = entries.iter().map(|e| f(e)).collect();
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        (avg, max, min)
    };
    let (avg_l2, max_l2, min_l2) = agg(&|e| e.rel_l2);
    let (avg_h1, max_h1, min_h1) = agg(&|e| e.rel_h1);
    let (avg_energy, max_energy, min_energy) = agg(&|e| e.rel_energy);
    Ok(ErrorReport {
        entries,
        avg_l2,
        max_l2,
        min_l2,
        avg_h1,
        max_h1,
        min_h1,
        avg_energy,
        max_energy,
        min_energy,
    })
}

// ---------------------------------------------------------------------------
// offline machinery
// ---------------------------------------------------------------------------

fn timed<T>(
    timings: &mut Vec<(String, f64)>,
    name: &'static str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::stage(name, e))?;
    timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

fn pod_with_rank(c: &CorrelationMatrix, tau: f64, rank: Option<usize>) -> Result<(PodBasis, usize)> {
    match rank {
        None => {
            let b = pod_from_correlation(c, tau)?;
            let r = b.retained();
            Ok((b, r))
        }
        Some(r) => {
            let b = pod_from_correlation(c, 1e-14)?;
            let r = r.min(b.retained());
            Ok((b, r))
        }
    }
}

/// Discrete H¹ Gram matrix (stiffness + mass, no boundary conditions).
fn h1_gram(space: &FemSpace) -> BandMatrix {
    let mut a = assemble_stiffness(space);
    let m = assemble_mass(space);
    let n = space.grid().node_count();
    let bw = space.bandwidth();
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let hi = (i + bw).min(n - 1);
        for j in lo..=hi {
            let v = m.get(i, j);
            if v != 0.0 {
                a.add(i, j, v);
            }
        }
    }
    a
}

/// POD basis of snapshot vectors in a matrix-weighted inner product,
/// re-orthonormalized by modified Gram-Schmidt for a tight invariant.
fn weighted_pod_basis(
    gram: &BandMatrix,
    snapshots: &[Vec<f64>],
    tau: f64,
    rank: Option<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let images: Vec<Vec<f64>> = snapshots.par_iter().map(|s| gram.matvec(s)).collect();
    let c = CorrelationMatrix::from_inner_products(snapshots.len(), |i, j| {
        dot(&snapshots[i], &images[j])
    })?;
    let (pod, r) = pod_with_rank(&c, tau, rank)?;
    let n = snapshots.first().map_or(0, Vec::len);
    let mut basis = Vec::with_capacity(r);
    for k in 0..r {
        let weights = pod.mode_weights(k);
        let mut v = vec![0.0; n];
        for (w, s) in weights.iter().zip(snapshots) {
            for (o, x) in v.iter_mut().zip(s) {
                *o += w * x;
            }
        }
        basis.push(v);
    }
    // Modified Gram-Schmidt in the gram-weighted product.
    for k in 0..basis.len() {
        for j in 0..k {
            let img = gram.matvec(&basis[j]);
            let p = dot(&basis[k], &img);
            let prev = basis[j].clone();
            for (o, x) in basis[k].iter_mut().zip(&prev) {
                *o -= p * x;
            }
        }
        let img = gram.matvec(&basis[k]);
        let norm = dot(&basis[k], &img).max(0.0).sqrt();
        if norm <= 0.0 {
            return Err(Error::Factorization(
                "reduced-basis vector degenerated during orthonormalization".into(),
            ));
        }
        for o in basis[k].iter_mut() {
            *o /= norm;
        }
    }
    Ok((basis, pod.eigenvalues().to_vec()))
}

/// Assemble a bilinear form whose coefficients are nodal fields sampled at
/// quadrature points (the shared interpolation rule of the hyper-reduced
/// and directly assembled paths).
fn assemble_nodal(
    space: &FemSpace,
    diff: Option<[&GridField; 4]>,
    adv: Option<[&GridField; 2]>,
    mass: Option<&GridField>,
) -> Result<BandMatrix> {
    assemble_operator(space, |p, _| {
        let mut c = QuadCoeff {
            diff: [[0.0; 2]; 2],
            adv: [0.0, 0.0],
            mass: 0.0,
        };
        if let Some(d) = &diff {
            c.diff = [
                [d[0].sample(&p), d[1].sample(&p)],
                [d[2].sample(&p), d[3].sample(&p)],
            ];
        }
        if let Some(a) = &adv {
            c.adv = [a[0].sample(&p), a[1].sample(&p)];
        }
        if let Some(m) = &mass {
            c.mass = m.sample(&p);
        }
        Ok(c)
    })
}

/// Split a stacked component-major sample vector into nodal fields.
fn unpack_sample(grid: TensorGrid, sample: &[f64], components: usize) -> Vec<GridField> {
    let n = grid.node_count();
    assert_eq!(sample.len(), components * n);
    (0..components)
        .map(|c| GridField::new(grid, sample[c * n..(c + 1) * n].to_vec()).expect("finite sample"))
        .collect()
}

/// Project an assembled operator onto a basis, flattened row-major.
fn project_operator(matrix: &BandMatrix, basis: &[Vec<f64>]) -> Vec<f64> {
    crate::fem::reduced_form(matrix, basis, basis)
}

/// Third-order reduced tensor of the quadratic advective flux
/// `T[k,i,l] = ∫ (b · (φ_i ∇φ_l + φ_l ∇φ_i)) φ_k`, flattened
/// `[k·n² + i·n + l]` (symmetric in `i, l`).
fn quadratic_flux_tensor(
    space: &FemSpace,
    bx: &GridField,
    by: &GridField,
    basis: &[Vec<f64>],
) -> Vec<f64> {
    let g = space.grid();
    let (n0, n1) = (g.axis_nodes(0), g.axis_nodes(1));
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let (x0, y0) = (g.domain(0)[0], g.domain(1)[0]);
    let w = hx * hy / 4.0;
    let nb = basis.len();
    let mut t = vec![0.0; nb * nb * nb];
    let gauss = [-0.577_350_269_189_625_8_f64, 0.577_350_269_189_625_8];
    for cy in 0..n1 - 1 {
        for cx in 0..n0 - 1 {
            let nodes = [
                g.linear_index(cx, cy),
                g.linear_index(cx + 1, cy),
                g.linear_index(cx, cy + 1),
                g.linear_index(cx + 1, cy + 1),
            ];
            for &eta in &gauss {
                for &xi in &gauss {
                    // Bilinear shape values and physical gradients.
                    let mut nsh = [0.0f64; 4];
                    let mut gxs = [0.0f64; 4];
                    let mut gys = [0.0f64; 4];
                    for a in 0..4 {
                        let sa = if a & 1 == 0 { -1.0 } else { 1.0 };
                        let ta = if a & 2 == 0 { -1.0 } else { 1.0 };
                        nsh[a] = 0.25 * (1.0 + sa * xi) * (1.0 + ta * eta);
                        gxs[a] = 0.25 * sa * (1.0 + ta * eta) * 2.0 / hx;
                        gys[a] = 0.25 * ta * (1.0 + sa * xi) * 2.0 / hy;
                    }
                    let p = [
                        x0 + (cx as f64 + (xi + 1.0) / 2.0) * hx,
                        y0 + (cy as f64 + (eta + 1.0) / 2.0) * hy,
                    ];
                    let b0 = bx.sample(&p);
                    let b1 = by.sample(&p);
                    // Basis values and advective gradients at the point.
                    let mut val = vec![0.0f64; nb];
                    let mut bgrad = vec![0.0f64; nb];
                    for (r, vec_r) in basis.iter().enumerate() {
                        let mut v = 0.0;
                        let mut gx = 0.0;
                        let mut gy = 0.0;
                        for a in 0..4 {
                            let u = vec_r[nodes[a]];
                            v += u * nsh[a];
                            gx += u * gxs[a];
                            gy += u * gys[a];
                        }
                        val[r] = v;
                        bgrad[r] = b0 * gx + b1 * gy;
                    }
                    for k in 0..nb {
                        let wk = w * val[k];
                        for i in 0..nb {
                            for l in 0..nb {
                                t[k * nb * nb + i * nb + l] +=
                                    wk * (val[i] * bgrad[l] + val[l] * bgrad[i]);
                            }
                        }
                    }
                }
            }
        }
    }
    t
}

/// Build one hyper-reduced coefficient form from training sample vectors.
#[allow(clippy::too_many_arguments)]
fn build_form_reduction(
    name: &str,
    kind: FormKind,
    grid: TensorGrid,
    modes: &TransportModes,
    samples: &[Vec<f64>],
    tau_eim: f64,
    reduce: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    spectra: &mut Vec<(String, Vec<f64>)>,
) -> Result<FormReduction> {
    let n = grid.node_count();
    let qw = grid.quad_weights();
    let c = CorrelationMatrix::from_inner_products(samples.len(), |i, j| {
        samples[i]
            .iter()
            .zip(&samples[j])
            .enumerate()
            .map(|(p, (a, b))| qw[p % n] * a * b)
            .sum()
    })?;
    let pod = pod_from_correlation(&c, tau_eim)?;
    let q = pod.retained();
    let len = samples.first().map_or(0, Vec::len);
    let eim_modes: Vec<Vec<f64>> = (0..q)
        .map(|k| {
            let weights = pod.mode_weights(k);
            let mut v = vec![0.0; len];
            for (w, s) in weights.iter().zip(samples) {
                for (o, x) in v.iter_mut().zip(s) {
                    *o += w * x;
                }
            }
            v
        })
        .collect();
    let basis = eim_construct(&eim_modes, q)?;
    let tensors = eim_reduced_tensor(&basis, reduce);
    // Nodal mode derivatives at the interpolation points only.
    let mode_grads: Vec<_> = modes.modes().iter().map(|m| m.gradient()).collect();
    let mode_hess: Vec<Vec<GridField>> = modes
        .modes()
        .iter()
        .map(boundary_consistent_hessian)
        .collect();
    let points = basis
        .points()
        .iter()
        .map(|&p| {
            let node = p % n;
            let component = p / n;
            let pos = grid.position(node);
            EimPointData {
                node,
                component,
                position: [pos[0], pos[1]],
                mode_grad: mode_grads
                    .iter()
                    .map(|gf| [gf.component(0).values()[node], gf.component(1).values()[node]])
                    .collect(),
                mode_hess: mode_hess
                    .iter()
                    .map(|h| {
                        [
                            h[0].values()[node],
                            h[1].values()[node],
                            h[2].values()[node],
                            h[3].values()[node],
                        ]
                    })
                    .collect(),
            }
        })
        .collect();
    spectra.push((name.to_string(), pod.eigenvalues().to_vec()));
    Ok(FormReduction {
        kind,
        basis,
        tensors,
        points,
    })
}

/// Nodal coefficient fields of the mapping at coefficients `w`: the
/// diffusion tensor (4 fields), determinant, and adjugate rows.
struct NodalMapFields {
    eval: crate::registration::MappingEvaluation,
    /// Determinant floored at [`DET_FLOOR`], matching the point path.
    det: GridField,
    k: Vec<GridField>,
    adj: [GridField; 4],
}

fn nodal_map_fields(modes: &TransportModes, w: &[f64]) -> Result<NodalMapFields> {
    let eval = build_inverse_map_projected(modes, w);
    let grid = *modes.grid();
    let n = grid.node_count();
    let j = &eval.jacobian;
    let adj_vals: Vec<[f64; 4]> = (0..n)
        .map(|i| {
            [
                j[3].values()[i],
                -j[1].values()[i],
                -j[2].values()[i],
                j[0].values()[i],
            ]
        })
        .collect();
    let det = eval.det.map(|v| v.max(DET_FLOOR));
    let mut k_fields = Vec::with_capacity(4);
    for c in 0..4 {
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let a = &adj_vals[i];
                let v = match c {
                    0 => a[0] * a[0] + a[1] * a[1],
                    1 | 2 => a[0] * a[2] + a[1] * a[3],
                    _ => a[2] * a[2] + a[3] * a[3],
                };
                v / det.values()[i]
            })
            .collect();
        k_fields.push(GridField::new(grid, vals)?);
    }
    let adj = [
        GridField::new(grid, adj_vals.iter().map(|a| a[0]).collect())?,
        GridField::new(grid, adj_vals.iter().map(|a| a[1]).collect())?,
        GridField::new(grid, adj_vals.iter().map(|a| a[2]).collect())?,
        GridField::new(grid, adj_vals.iter().map(|a| a[3]).collect())?,
    ];
    Ok(NodalMapFields {
        eval,
        det,
        k: k_fields,
        adj,
    })
}

/// Stack nodal fields into one component-major sample vector.
fn stack_fields(fields: &[&GridField]) -> Vec<f64> {
    let mut out = Vec::with_capacity(fields.len() * fields[0].values().len());
    for f in fields {
        out.extend_from_slice(f.values());
    }
    out
}

fn adj_times(adj: &[GridField; 4], v: [&GridField; 2]) -> Result<[GridField; 2]> {
    let grid = *adj[0].grid();
    let n = grid.node_count();
    let c0: Vec<f64> = (0..n)
        .map(|i| adj[0].values()[i] * v[0].values()[i] + adj[1].values()[i] * v[1].values()[i])
        .collect();
    let c1: Vec<f64> = (0..n)
        .map(|i| adj[2].values()[i] * v[0].values()[i] + adj[3].values()[i] * v[1].values()[i])
        .collect();
    Ok([GridField::new(grid, c0)?, GridField::new(grid, c1)?])
}

fn adj_times_const(adj: &[GridField; 4], v: [f64; 2]) -> Result<[GridField; 2]> {
    let grid = *adj[0].grid();
    let c0 = GridField::new(
        grid,
        adj[0]
            .values()
            .iter()
            .zip(adj[1].values())
            .map(|(a, b)| a * v[0] + b * v[1])
            .collect(),
    )?;
    let c1 = GridField::new(
        grid,
        adj[2]
            .values()
            .iter()
            .zip(adj[3].values())
            .map(|(a, b)| a * v[0] + b * v[1])
            .collect(),
    )?;
    Ok([c0, c1])
}

/// Shared registration stage: barycentric reference, transport potentials,
/// boundary-compatible projection, and transport modes.
struct RegistrationData {
    reference_ot: GridDensity,
    reference_pde: GridDensity,
    modes: TransportModes,
    embedding_spectrum: Vec<f64>,
}

fn register_snapshots(
    pde_grid: TensorGrid,
    densities: &[GridDensity],
    params: &[Vec<f64>],
    options: &RomOptions,
    timings: &mut Vec<(String, f64)>,
) -> Result<RegistrationData> {
    let reference_ot = timed(timings, "reference", || {
        let w = vec![1.0 / densities.len() as f64; densities.len()];
        // The reference only anchors the registration, and the entropic blur
        // scale sqrt(epsilon) is much larger than the solver grid spacing, so
        // the barycenter is computed at solver resolution and resampled up.
        // A moderate fixed-point tolerance keeps the offline phase affordable.
        let coarse: Vec<GridDensity> = densities
            .iter()
            .map(|d| normalize_density(&d.field().resample(&pde_grid).map(|v| v.max(0.0))))
            .collect::<Result<_>>()?;
        let mut cfg = crate::ot::BarycenterConfig::new(options.epsilon, options.debias);
        cfg.tol = 1e-4;
        cfg.max_iter = 2000;
        let (bary, _) = crate::ot::entropic_barycenter_cfg(&coarse, &w, &cfg)?;
        let ot_grid = *densities[0].field().grid();
        normalize_density(&bary.field().resample(&ot_grid).map(|v| v.max(0.0)))
    })?;

    let projected = timed(timings, "potentials", || {
        let cfg = SinkhornConfig::new(options.epsilon)
            .with_annealing(true)
            .with_tol(1e-4);
        let self_potential = if options.debias {
            Some(sinkhorn_self_solve(&reference_ot, &cfg)?.0)
        } else {
            None
        };
        let potentials: Vec<GridField> = densities
            .par_iter()
            .map(|rho| -> Result<GridField> {
                let res = sinkhorn_solve(&reference_ot, rho, &cfg)?;
                let mut psi = res.psi_rho;
                if let Some(sp) = &self_potential {
                    psi.add_scaled(sp, -1.0)?;
                }
                Ok(psi)
            })
            .collect::<Result<_>>()?;
        let proj_cfg = ProjectionConfig::from_epsilon(options.epsilon);
        potentials
            .into_par_iter()
            .map(|psi| h1_boundary_projection(&psi.resample(&pde_grid), proj_cfg))
            .collect::<Result<Vec<GridField>>>()
    })?;

    let (modes, embedding_spectrum, reference_pde) = timed(timings, "modes", || {
        let ref_field = reference_ot.field().resample(&pde_grid);
        let reference_pde = normalize_density(&ref_field.map(|v| v.max(0.0)))?;
        let set = MongeEmbeddingSet::new(reference_pde.clone(), projected, params.to_vec())?;
        let mut modes = build_transport_modes(&set, options.tau)?;
        if let Some(m) = options.mode_rank {
            modes.truncate(m);
        }
        let spectrum = modes.eigenvalues().to_vec();
        Ok((modes, spectrum, reference_pde))
    })?;

    Ok(RegistrationData {
        reference_ot,
        reference_pde,
        modes,
        embedding_spectrum,
    })
}

/// Map a snapshot to the reference domain: `ũ(y) = u(Φ⁻¹(y))`, with the
/// homogeneous boundary values pinned exactly.
fn map_snapshot(u: &GridField, modes: &TransportModes, w: &[f64]) -> Result<Vec<f64>> {
    let grid = *modes.grid();
    let eval = build_inverse_map_projected(modes, w);
    let mut vals = Vec::with_capacity(grid.node_count());
    for i in 0..grid.node_count() {
        if grid.is_boundary(i) {
            vals.push(0.0);
        } else {
            let x = eval.inverse_map.at(i);
            vals.push(u.sample(&x));
        }
    }
    Ok(vals)
}

fn ot_grid_for(pde_grid: &TensorGrid, refine: usize) -> Result<TensorGrid> {
    let n = (pde_grid.axis_nodes(0) - 1) * refine.max(1) + 1;
    TensorGrid::unit(2, n)
}

fn snapshot_density(
    u: &GridField,
    ot_grid: &TensorGrid,
    strategy: DensityStrategy,
    floor: f64,
    source: Option<&dyn Fn([f64; 2]) -> f64>,
) -> Result<GridDensity> {
    let raw = match strategy {
        DensityStrategy::SolutionSquared => u.resample(ot_grid).map(|v| v * v),
        DensityStrategy::Solution => u.resample(ot_grid).map(|v| v.max(0.0)),
        DensityStrategy::Source => {
            let f = source.expect("source strategy needs the source closure");
            GridField::from_fn(*ot_grid, |p| f([p[0], p[1]]).max(0.0))
        }
    };
    normalize_density_floored(&raw, floor)
}

// ---------------------------------------------------------------------------
// offline training
// ---------------------------------------------------------------------------

/// Run the full offline phase for either model problem.
pub fn offline_train(problem: &ProblemSpec, options: &RomOptions) -> Result<OfflineArtifacts> {
    match problem {
        ProblemSpec::Poisson { .. } => offline_train_poisson(problem, options),
        ProblemSpec::Advection { .. } => offline_train_advection(problem, options),
    }
}

fn tolerance_set(options: &RomOptions, grid: &TensorGrid) -> ToleranceSet {
    let proj = ProjectionConfig::from_epsilon(options.epsilon);
    ToleranceSet {
        epsilon: options.epsilon,
        tau: options.tau,
        tau_eim: options.tau_eim,
        floor: options.floor,
        kappa2: proj.kappa2,
        delta: proj.delta,
        eps_fine: default_inversion_epsilon(grid),
    }
}

fn offline_train_poisson(spec: &ProblemSpec, options: &RomOptions) -> Result<OfflineArtifacts> {
    let ProblemSpec::Poisson {
        problem,
        grid_nodes,
        n_s,
    } = spec
    else {
        unreachable!()
    };
    let mut timings = Vec::new();
    let pde_grid = TensorGrid::unit(2, *grid_nodes)?;
    let ot_grid = ot_grid_for(&pde_grid, options.ot_refine)?;
    let space = FemSpace::with_dirichlet_boundary(pde_grid)?;

    let (mus, snapshots) = timed(&mut timings, "snapshots", || {
        let mus = problem.sample_parameters(*n_s, options.seed);
        let snaps = problem.snapshot_sweep(&space, &mus)?;
        Ok((mus, snaps))
    })?;
    let params: Vec<Vec<f64>> = mus.iter().map(|m| vec![m[0], m[1]]).collect();

    let densities = timed(&mut timings, "densities", || {
        mus.par_iter()
            .zip(&snapshots)
            .map(|(&mu, u)| {
                let src = problem.source(mu);
                snapshot_density(u, &ot_grid, options.density, options.floor, Some(&src))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let reg = register_snapshots(pde_grid, &densities, &params, options, &mut timings)?;
    let modes = reg.modes;

    let models = timed(&mut timings, "regression", || {
        (0..modes.mode_count())
            .map(|j| gp_fit(&params, &modes.coefficients()[j]))
            .collect::<Result<Vec<_>>>()
    })?;

    let gram = h1_gram(&space);
    let (reference_basis, plain_basis, snapshot_spectrum, mapped_spectrum) =
        timed(&mut timings, "mapped-basis", || {
            let mapped: Vec<Vec<f64>> = (0..snapshots.len())
                .into_par_iter()
                .map(|i| map_snapshot(&snapshots[i], &modes, &modes.snapshot_coefficients(i)))
                .collect::<Result<_>>()?;
            let (ref_basis, mapped_spec) =
                weighted_pod_basis(&gram, &mapped, options.tau, options.basis_rank)?;
            let raw: Vec<Vec<f64>> = snapshots.iter().map(|s| s.values().to_vec()).collect();
            let n_plain = options
                .plain_rank
                .unwrap_or(ref_basis.len() + modes.mode_count());
            let (plain, snap_spec) = weighted_pod_basis(&gram, &raw, 0.0, Some(n_plain))?;
            Ok((ref_basis, plain, snap_spec, mapped_spec))
        })?;

    let mut form_spectra = Vec::new();
    let forms = timed(&mut timings, "hyper-reduction", || {
        let basis_vecs = &reference_basis;
        let grid = pde_grid;
        let n = grid.node_count();
        // Training coefficient fields at the snapshot mapping states.
        let states: Vec<NodalMapFields> = (0..snapshots.len())
            .map(|i| nodal_map_fields(&modes, &modes.snapshot_coefficients(i)))
            .collect::<Result<_>>()?;
        let k_samples: Vec<Vec<f64>> = states
            .iter()
            .map(|s| stack_fields(&[&s.k[0], &s.k[1], &s.k[2], &s.k[3]]))
            .collect();
        let g_samples: Vec<Vec<f64>> = states
            .iter()
            .zip(&mus)
            .map(|(s, &mu)| {
                let f = problem.source(mu);
                (0..n)
                    .map(|i| f(s.eval.inverse_map.at(i)) * s.det.values()[i])
                    .collect()
            })
            .collect();
        let mass = assemble_mass(&space);
        let reduce_k = |sample: &[f64]| -> Vec<f64> {
            let fields = unpack_sample(grid, sample, 4);
            let m = assemble_nodal(
                &space,
                Some([&fields[0], &fields[1], &fields[2], &fields[3]]),
                None,
                None,
            )
            .expect("nodal assembly of a finite sample");
            project_operator(&m, basis_vecs)
        };
        let reduce_g = |sample: &[f64]| -> Vec<f64> {
            let mg = mass.matvec(sample);
            basis_vecs.iter().map(|b| dot(b, &mg)).collect()
        };
        let stiffness = build_form_reduction(
            "diffusion",
            FormKind::Diffusion,
            grid,
            &modes,
            &k_samples,
            options.tau_eim,
            &reduce_k,
            &mut form_spectra,
        )?;
        let rhs = build_form_reduction(
            "source",
            FormKind::SourceTimesDet,
            grid,
            &modes,
            &g_samples,
            options.tau_eim,
            &reduce_g,
            &mut form_spectra,
        )?;
        Ok(Forms::Poisson { stiffness, rhs })
    })?;

    let reference_basis_fields: Vec<GridField> = reference_basis
        .into_iter()
        .map(|v| GridField::new(pde_grid, v))
        .collect::<Result<_>>()?;
    let plain_basis_fields: Vec<GridField> = plain_basis
        .into_iter()
        .map(|v| GridField::new(pde_grid, v))
        .collect::<Result<_>>()?;

    Ok(OfflineArtifacts {
        version: ARTIFACT_VERSION,
        problem: spec.clone(),
        options: options.clone(),
        grid: pde_grid,
        ot_grid,
        reference_density: reg.reference_ot,
        reference_density_pde: reg.reference_pde,
        modes,
        coefficient_models: models,
        reference_basis: reference_basis_fields,
        plain_basis: plain_basis_fields,
        training_parameters: params,
        forms,
        spectra: SpectraReport {
            snapshot: snapshot_spectrum,
            embedding: reg.embedding_spectrum,
            mapped: mapped_spectrum,
            forms: form_spectra,
        },
        tolerances: tolerance_set(options, &pde_grid),
        timings,
    })
}

fn offline_train_advection(spec: &ProblemSpec, options: &RomOptions) -> Result<OfflineArtifacts> {
    let ProblemSpec::Advection {
        base,
        grid_nodes,
        n_alpha,
        t_train,
    } = spec
    else {
        unreachable!()
    };
    let mut timings = Vec::new();
    let pde_grid = TensorGrid::unit(2, *grid_nodes)?;
    let ot_grid = ot_grid_for(&pde_grid, options.ot_refine)?;
    let space = FemSpace::with_dirichlet_boundary(pde_grid)?;
    let dt = base.dt;
    let steps_per_traj = (*t_train / dt).round() as usize + 1;

    // Trajectories, flattened alpha-major with time inner.
    let (snapshots, params, alphas_per_snapshot) = timed(&mut timings, "snapshots", || {
        let alphas: Vec<f64> = (0..*n_alpha)
            .map(|i| 2.0 * std::f64::consts::PI * i as f64 / *n_alpha as f64)
            .collect();
        let sweeps: Vec<(f64, Vec<GridField>)> = alphas
            .par_iter()
            .map(|&alpha| {
                let mut p = base.clone();
                p.alpha = alpha;
                let stepper = AdvectionStepper::new(&space, p);
                Ok((alpha, stepper.trajectory(*t_train)?))
            })
            .collect::<Result<_>>()?;
        let mut snaps = Vec::new();
        let mut params = Vec::new();
        let mut snap_alpha = Vec::new();
        for (alpha, traj) in sweeps {
            let [ca, sa] = embed_angle(alpha);
            for (k, field) in traj.into_iter().enumerate() {
                snaps.push(field);
                params.push(vec![k as f64 * dt, ca, sa]);
                snap_alpha.push(alpha);
            }
        }
        Ok((snaps, params, snap_alpha))
    })?;

    let densities = timed(&mut timings, "densities", || {
        snapshots
            .par_iter()
            .map(|u| snapshot_density(u, &ot_grid, options.density, options.floor, None))
            .collect::<Result<Vec<_>>>()
    })?;

    let reg = register_snapshots(pde_grid, &densities, &params, options, &mut timings)?;
    let modes = reg.modes;

    let models = timed(&mut timings, "regression", || {
        (0..modes.mode_count())
            .map(|j| gp_fit(&params, &modes.coefficients()[j]))
            .collect::<Result<Vec<_>>>()
    })?;

    let gram = h1_gram(&space);
    let (reference_basis, plain_basis, snapshot_spectrum, mapped_spectrum) =
        timed(&mut timings, "mapped-basis", || {
            let mapped: Vec<Vec<f64>> = (0..snapshots.len())
                .into_par_iter()
                .map(|i| map_snapshot(&snapshots[i], &modes, &modes.snapshot_coefficients(i)))
                .collect::<Result<_>>()?;
            let (ref_basis, mapped_spec) =
                weighted_pod_basis(&gram, &mapped, options.tau, options.basis_rank)?;
            let raw: Vec<Vec<f64>> = snapshots.iter().map(|s| s.values().to_vec()).collect();
            let n_plain = options
                .plain_rank
                .unwrap_or(ref_basis.len() + modes.mode_count());
            let (plain, snap_spec) = weighted_pod_basis(&gram, &raw, 0.0, Some(n_plain))?;
            Ok((ref_basis, plain, snap_spec, mapped_spec))
        })?;

    let mut form_spectra = Vec::new();
    let forms = timed(&mut timings, "hyper-reduction", || {
        let basis_vecs = &reference_basis;
        let grid = pde_grid;
        let m = modes.mode_count();
        // Per-snapshot mapping coefficients and their time derivatives
        // (centred differences along each trajectory).
        let w_all: Vec<Vec<f64>> = (0..snapshots.len())
            .map(|i| modes.snapshot_coefficients(i))
            .collect();
        let mut wdot_all = vec![vec![0.0; m]; snapshots.len()];
        if steps_per_traj >= 3 {
            for a in 0..*n_alpha {
                let base_idx = a * steps_per_traj;
                for j in 0..m {
                    let series: Vec<f64> = (0..steps_per_traj)
                        .map(|k| w_all[base_idx + k][j])
                        .collect();
                    let deriv = crate::fem::centered_time_derivative(&series, dt);
                    for (k, d) in deriv.into_iter().enumerate() {
                        wdot_all[base_idx + k][j] = d;
                    }
                }
            }
        }
        let states: Vec<NodalMapFields> = w_all
            .iter()
            .map(|w| nodal_map_fields(&modes, w))
            .collect::<Result<_>>()?;
        let det_samples: Vec<Vec<f64>> = states
            .iter()
            .map(|s| s.det.values().to_vec())
            .collect();
        let frame_samples: Vec<Vec<f64>> = states
            .iter()
            .zip(&wdot_all)
            .map(|(s, wd)| -> Result<Vec<f64>> {
                let v = modes.combine(wd).gradient();
                let c = adj_times(&s.adj, [v.component(0), v.component(1)])?;
                Ok(stack_fields(&[&c[0], &c[1]]))
            })
            .collect::<Result<_>>()?;
        let adv_samples: Vec<Vec<f64>> = states
            .iter()
            .zip(&alphas_per_snapshot)
            .map(|(s, &alpha)| -> Result<Vec<f64>> {
                let mut p = base.clone();
                p.alpha = alpha;
                let c = adj_times_const(&s.adj, p.velocity())?;
                Ok(stack_fields(&[&c[0], &c[1]]))
            })
            .collect::<Result<_>>()?;
        let k_samples: Vec<Vec<f64>> = states
            .iter()
            .map(|s| stack_fields(&[&s.k[0], &s.k[1], &s.k[2], &s.k[3]]))
            .collect();

        let reduce_mass = |sample: &[f64]| -> Vec<f64> {
            let f = unpack_sample(grid, sample, 1);
            let m = assemble_nodal(&space, None, None, Some(&f[0]))
                .expect("nodal assembly of a finite sample");
            project_operator(&m, basis_vecs)
        };
        let reduce_adv = |sample: &[f64]| -> Vec<f64> {
            let f = unpack_sample(grid, sample, 2);
            let m = assemble_nodal(&space, None, Some([&f[0], &f[1]]), None)
                .expect("nodal assembly of a finite sample");
            project_operator(&m, basis_vecs)
        };
        let reduce_k = |sample: &[f64]| -> Vec<f64> {
            let f = unpack_sample(grid, sample, 4);
            let m = assemble_nodal(&space, Some([&f[0], &f[1], &f[2], &f[3]]), None, None)
                .expect("nodal assembly of a finite sample");
            project_operator(&m, basis_vecs)
        };

        let mass = build_form_reduction(
            "determinant",
            FormKind::Determinant,
            grid,
            &modes,
            &det_samples,
            options.tau_eim,
            &reduce_mass,
            &mut form_spectra,
        )?;
        let frame = build_form_reduction(
            "frame-velocity",
            FormKind::FrameVelocity,
            grid,
            &modes,
            &frame_samples,
            options.tau_eim,
            &reduce_adv,
            &mut form_spectra,
        )?;
        let advection = build_form_reduction(
            "mapped-velocity",
            FormKind::MappedVelocity,
            grid,
            &modes,
            &adv_samples,
            options.tau_eim,
            &reduce_adv,
            &mut form_spectra,
        )?;
        let diffusion = build_form_reduction(
            "diffusion",
            FormKind::Diffusion,
            grid,
            &modes,
            &k_samples,
            options.tau_eim,
            &reduce_k,
            &mut form_spectra,
        )?;
        // Quadratic-flux tensors over the mapped-velocity interpolation
        // functions (the nonlinear term shares their coefficient field).
        let nonlinear: Vec<Vec<f64>> = advection
            .basis
            .functions()
            .par_iter()
            .map(|f| {
                let fields = unpack_sample(grid, f, 2);
                quadratic_flux_tensor(&space, &fields[0], &fields[1], basis_vecs)
            })
            .collect();
        Ok(Forms::Advection {
            mass,
            frame,
            advection,
            diffusion,
            nonlinear,
        })
    })?;

    let reference_basis_fields: Vec<GridField> = reference_basis
        .into_iter()
        .map(|v| GridField::new(pde_grid, v))
        .collect::<Result<_>>()?;
    let plain_basis_fields: Vec<GridField> = plain_basis
        .into_iter()
        .map(|v| GridField::new(pde_grid, v))
        .collect::<Result<_>>()?;

    Ok(OfflineArtifacts {
        version: ARTIFACT_VERSION,
        problem: spec.clone(),
        options: options.clone(),
        grid: pde_grid,
        ot_grid,
        reference_density: reg.reference_ot,
        reference_density_pde: reg.reference_pde,
        modes,
        coefficient_models: models,
        reference_basis: reference_basis_fields,
        plain_basis: plain_basis_fields,
        training_parameters: params,
        forms,
        spectra: SpectraReport {
            snapshot: snapshot_spectrum,
            embedding: reg.embedding_spectrum,
            mapped: mapped_spectrum,
            forms: form_spectra,
        },
        tolerances: tolerance_set(options, &pde_grid),
        timings,
    })
}

// ---------------------------------------------------------------------------
// online solvers
// ---------------------------------------------------------------------------

fn basis_vectors(fields: &[GridField]) -> Vec<Vec<f64>> {
    fields.iter().map(|f| f.values().to_vec()).collect()
}

fn combine_basis(grid: TensorGrid, basis: &[GridField], coeff: &[f64]) -> GridField {
    let mut out = GridField::zeros(grid);
    for (c, b) in coeff.iter().zip(basis) {
        out.add_scaled(b, *c).expect("same grid");
    }
    out
}

/// Solve the reduced elliptic system at one parameter.  With `use_eim` the
/// assembly touches only the stored interpolation points; otherwise the
/// mapped operator is assembled on the full grid.
pub fn online_solve_poisson(
    artifacts: &OfflineArtifacts,
    mu: [f64; 2],
    use_eim: bool,
) -> Result<OnlineSolution> {
    let ProblemSpec::Poisson { problem, .. } = &artifacts.problem else {
        return Err(Error::InvalidArgument(
            "artifacts were not trained for the elliptic problem".into(),
        ));
    };
    let Forms::Poisson { stiffness, rhs } = &artifacts.forms else {
        return Err(Error::Artifact("elliptic operator stack missing".into()));
    };
    let mut timings = Vec::new();
    let start = Instant::now();
    let w = artifacts.predict_coefficients(&[mu[0], mu[1]]);
    timings.push(("regression".to_string(), start.elapsed().as_secs_f64()));

    let n = artifacts.basis_size();
    let start = Instant::now();
    let (s_red, f_red) = if use_eim {
        let theta_k = stiffness.theta(&w, &FormExtra::None)?;
        let src = problem.source(mu);
        let theta_f = rhs.theta(&w, &FormExtra::Source(&src))?;
        (stiffness.contract(&theta_k), rhs.contract(&theta_f))
    } else {
        let space = FemSpace::with_dirichlet_boundary(artifacts.grid)?;
        let fields = nodal_map_fields(&artifacts.modes, &w)?;
        let basis = basis_vectors(&artifacts.reference_basis);
        let m = assemble_nodal(
            &space,
            Some([&fields.k[0], &fields.k[1], &fields.k[2], &fields.k[3]]),
            None,
            None,
        )?;
        let s_red = project_operator(&m, &basis);
        let src = problem.source(mu);
        let g: Vec<f64> = (0..artifacts.grid.node_count())
            .map(|i| src(fields.eval.inverse_map.at(i)) * fields.det.values()[i])
            .collect();
        let mass = assemble_mass(&space);
        let mg = mass.matvec(&g);
        let f_red: Vec<f64> = basis.iter().map(|b| dot(b, &mg)).collect();
        (s_red, f_red)
    };
    timings.push(("assembly".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let lu = DenseLu::factor(n, &s_red)?;
    let coeff = lu.solve(&f_red);
    timings.push(("solve".to_string(), start.elapsed().as_secs_f64()));

    let reference_field = combine_basis(artifacts.grid, &artifacts.reference_basis, &coeff);
    let extrapolated = mu[0].abs() > problem.box_half || mu[1].abs() > problem.box_half;
    Ok(OnlineSolution {
        parameter: vec![mu[0], mu[1]],
        coefficients: coeff,
        mapping_coefficients: w,
        reference_field,
        physical_field: None,
        extrapolated,
        timings,
    })
}

/// Reduced implicit-midpoint step: Newton on
/// `M(ũ₁−ũ₀) + Δt (L ũ_mid + γ N[ũ_mid]) = 0` with a dense Jacobian.
fn reduced_midpoint_step(
    n: usize,
    m_red: &[f64],
    l_red: &[f64],
    tensor: &[f64],
    gamma: f64,
    u0: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let quad = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for l in 0..n {
                    s += tensor[k * n * n + i * n + l] * u[i] * u[l];
                }
            }
            out[k] = s;
        }
        out
    };
    let quad_jac = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += (tensor[k * n * n + i * n + l] + tensor[k * n * n + l * n + i]) * u[i];
                }
                out[k * n + l] = s;
            }
        }
        out
    };
    let matvec = |a: &[f64], x: &[f64]| -> Vec<f64> {
        (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
    };
    let residual = |u1: &[f64]| -> Vec<f64> {
        let um: Vec<f64> = u0.iter().zip(u1).map(|(a, b)| 0.5 * (a + b)).collect();
        let du: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
        let mdu = matvec(m_red, &du);
        let lum = matvec(l_red, &um);
        let nl = quad(&um);
        (0..n)
            .map(|k| mdu[k] + dt * (lum[k] + gamma * nl[k]))
            .collect()
    };
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = 1.0 + inf(&matvec(m_red, u0));
    let tol = 1e-10 * scale;
    let mut u1 = u0.to_vec();
    let mut g = residual(&u1);
    for _ in 0..25 {
        if inf(&g) <= tol {
            return Ok(u1);
        }
        let um: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
        let dn = quad_jac(&um);
        let mut jac = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                jac[k * n + l] =
                    m_red[k * n + l] + 0.5 * dt * (l_red[k * n + l] + gamma * dn[k * n + l]);
            }
        }
        let lu = DenseLu::factor(n, &jac)?;
        let delta = lu.solve(&g);
        for (u, d) in u1.iter_mut().zip(&delta) {
            *u -= d;
        }
        g = residual(&u1);
    }
    if inf(&g) <= tol {
        Ok(u1)
    } else {
        Err(Error::NewtonNonConvergence(25))
    }
}

/// Reduced operators of the advection problem at one mapping state.
fn advection_reduced_operators(
    artifacts: &OfflineArtifacts,
    w: &[f64],
    wdot: &[f64],
    velocity: [f64; 2],
    beta: f64,
    use_eim: bool,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = artifacts.basis_size();
    let Forms::Advection {
        mass,
        frame,
        advection,
        diffusion,
        nonlinear,
    } = &artifacts.forms
    else {
        return Err(Error::Artifact("advection operator stack missing".into()));
    };
    if use_eim {
        let theta_m = mass.theta(w, &FormExtra::None)?;
        let theta_t = frame.theta(w, &FormExtra::ModeVelocity(wdot))?;
        let theta_a = advection.theta(w, &FormExtra::Velocity(velocity))?;
        let theta_k = diffusion.theta(w, &FormExtra::None)?;
        let m_red = mass.contract(&theta_m);
        let ct = frame.contract(&theta_t);
        let ca = advection.contract(&theta_a);
        let s_red = diffusion.contract(&theta_k);
        let mut l_red = vec![0.0; n * n];
        for i in 0..n * n {
            l_red[i] = ct[i] + ca[i] + beta * s_red[i];
        }
        let mut tensor = vec![0.0; n * n * n];
        for (t, a) in theta_a.iter().zip(nonlinear) {
            for (o, v) in tensor.iter_mut().zip(a) {
                *o += t * v;
            }
        }
        Ok((m_red, l_red, tensor))
    } else {
        let space = FemSpace::with_dirichlet_boundary(artifacts.grid)?;
        let basis = basis_vectors(&artifacts.reference_basis);
        let state = nodal_map_fields(&artifacts.modes, w)?;
        let vframe = artifacts.modes.combine(wdot).gradient();
        let ct_fields = adj_times(&state.adj, [vframe.component(0), vframe.component(1)])?;
        let ba_fields = adj_times_const(&state.adj, velocity)?;
        let m_mat = assemble_nodal(&space, None, None, Some(&state.det))?;
        let ct_mat = assemble_nodal(&space, None, Some([&ct_fields[0], &ct_fields[1]]), None)?;
        let ca_mat = assemble_nodal(&space, None, Some([&ba_fields[0], &ba_fields[1]]), None)?;
        let s_mat = assemble_nodal(
            &space,
            Some([&state.k[0], &state.k[1], &state.k[2], &state.k[3]]),
            None,
            None,
        )?;
        let m_red = project_operator(&m_mat, &basis);
        let ct = project_operator(&ct_mat, &basis);
        let ca = project_operator(&ca_mat, &basis);
        let s_red = project_operator(&s_mat, &basis);
        let mut l_red = vec![0.0; n * n];
        for i in 0..n * n {
            l_red[i] = ct[i] + ca[i] + beta * s_red[i];
        }
        let tensor = quadratic_flux_tensor(&space, &ba_fields[0], &ba_fields[1], &basis);
        Ok((m_red, l_red, tensor))
    }
}

/// March the reduced advection system to `horizon`, returning one solution
/// per recorded time (including `t = 0`).
pub fn online_advance_advection(
    artifacts: &OfflineArtifacts,
    alpha: f64,
    horizon: f64,
    use_eim: bool,
) -> Result<Vec<OnlineSolution>> {
    let ProblemSpec::Advection { base, t_train, .. } = &artifacts.problem else {
        return Err(Error::InvalidArgument(
            "artifacts were not trained for the advection problem".into(),
        ));
    };
    let dt = base.dt;
    let steps = (horizon / dt).round() as usize;
    let [ca, sa] = embed_angle(alpha);
    let mut problem = base.clone();
    problem.alpha = alpha;
    let velocity = problem.velocity();
    let delta = dt / 10.0;
    let predict_w = |t: f64| artifacts.predict_coefficients(&[t, ca, sa]);
    let predict_wdot = |t: f64| -> Vec<f64> {
        let plus = predict_w(t + delta);
        let minus = predict_w(t - delta);
        plus.iter()
            .zip(&minus)
            .map(|(p, m)| (p - m) / (2.0 * delta))
            .collect()
    };

    // Project the initial condition onto the reference basis through the
    // t = 0 mapping (H¹-orthonormal basis: plain weighted inner products).
    let space = FemSpace::with_dirichlet_boundary(artifacts.grid)?;
    let gram = h1_gram(&space);
    let basis = basis_vectors(&artifacts.reference_basis);
    let w0 = predict_w(0.0);
    let init = problem.initial_field(&artifacts.grid);
    let u0_mapped = map_snapshot(&init, &artifacts.modes, &w0)?;
    let img = gram.matvec(&u0_mapped);
    let mut coeff: Vec<f64> = basis.iter().map(|b| dot(b, &img)).collect();

    let n = artifacts.basis_size();
    let mut out = Vec::with_capacity(steps + 1);
    let push_state =
        |out: &mut Vec<OnlineSolution>, t: f64, coeff: &[f64], w: Vec<f64>, secs: f64| {
            let reference_field = combine_basis(artifacts.grid, &artifacts.reference_basis, coeff);
            out.push(OnlineSolution {
                parameter: vec![t, alpha],
                coefficients: coeff.to_vec(),
                mapping_coefficients: w,
                reference_field,
                physical_field: None,
                extrapolated: t > *t_train + 1e-12,
                timings: vec![("step".to_string(), secs)],
            });
        };
    push_state(&mut out, 0.0, &coeff, w0, 0.0);

    for k in 0..steps {
        let start = Instant::now();
        let t_mid = (k as f64 + 0.5) * dt;
        let w_mid = predict_w(t_mid);
        let wdot_mid = predict_wdot(t_mid);
        let (m_red, l_red, tensor) = advection_reduced_operators(
            artifacts,
            &w_mid,
            &wdot_mid,
            velocity,
            problem.beta,
            use_eim,
        )?;
        coeff = reduced_midpoint_step(n, &m_red, &l_red, &tensor, problem.gamma, &coeff, dt)?;
        let secs = start.elapsed().as_secs_f64();
        let t = (k + 1) as f64 * dt;
        push_state(&mut out, t, &coeff, predict_w(t), secs);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// physical-domain reconstruction and comparisons
// ---------------------------------------------------------------------------

/// Compose the reference-domain solution with the forward map:
/// `u(x) = ṽ(Φ(x))`, with Φ recovered by soft inversion.
pub fn remap_to_physical(
    solution: &OnlineSolution,
    artifacts: &OfflineArtifacts,
) -> Result<GridField> {
    let forward = invert_map(
        &artifacts.modes,
        &solution.mapping_coefficients,
        artifacts.tolerances.eps_fine,
    )?;
    let grid = artifacts.grid;
    let vals: Vec<f64> = (0..grid.node_count())
        .map(|i| {
            let y = forward.at(i);
            solution.reference_field.sample(&y)
        })
        .collect();
    GridField::new(grid, vals)
}

/// Measure the physical-domain error of a solution against a high-fidelity
/// field, split into the reference-domain error, the map round-trip residue
/// of the truth, and the change-of-measure gap.
pub fn error_decomposition(
    solution: &OnlineSolution,
    artifacts: &OfflineArtifacts,
    hf: &GridField,
) -> Result<ErrorDecomposition> {
    let grid = artifacts.grid;
    let w = &solution.mapping_coefficients;
    let forward = invert_map(&artifacts.modes, w, artifacts.tolerances.eps_fine)?;
    let eval = build_inverse_map_projected(&artifacts.modes, w);
    // Truth mapped to the reference domain.
    let hf_mapped = GridField::new(
        grid,
        (0..grid.node_count())
            .map(|i| hf.sample(&eval.inverse_map.at(i)))
            .collect(),
    )?;
    let ref_diff = diff_field(&solution.reference_field, &hf_mapped);
    let reference = l2_norm(&ref_diff);
    // Both the solution and the mapped truth pushed forward to physical x.
    let compose = |f: &GridField| -> Result<GridField> {
        GridField::new(
            grid,
            (0..grid.node_count()).map(|i| f.sample(&forward.at(i))).collect(),
        )
    };
    let physical_field = compose(&solution.reference_field)?;
    let roundtrip = compose(&hf_mapped)?;
    let physical = l2_norm(&diff_field(&physical_field, hf));
    let remap = l2_norm(&diff_field(&roundtrip, hf));
    let cross = l2_norm(&compose(&ref_diff)?) - reference;
    Ok(ErrorDecomposition {
        physical,
        reference,
        remap,
        cross,
    })
}

/// Classical (unregistered) reduced solve of the elliptic problem on the
/// stored comparison basis.
pub fn plain_solve_poisson(artifacts: &OfflineArtifacts, mu: [f64; 2]) -> Result<GridField> {
    let ProblemSpec::Poisson { problem, .. } = &artifacts.problem else {
        return Err(Error::InvalidArgument(
            "artifacts were not trained for the elliptic problem".into(),
        ));
    };
    let space = FemSpace::with_dirichlet_boundary(artifacts.grid)?;
    let basis = basis_vectors(&artifacts.plain_basis);
    let stiff = assemble_stiffness(&space);
    let s_red = crate::fem::reduced_form(&stiff, &basis, &basis);
    // Same nodal-interpolated load as the registered online path, so the
    // two reduced models differ only in their bases.
    let src = problem.source(mu);
    let g: Vec<f64> = (0..artifacts.grid.node_count())
        .map(|i| {
            let p = artifacts.grid.position(i);
            src([p[0], p[1]])
        })
        .collect();
    let mg = assemble_mass(&space).matvec(&g);
    let f_red: Vec<f64> = basis.iter().map(|v| dot(v, &mg)).collect();
    let n = basis.len();
    let lu = DenseLu::factor(n, &s_red)?;
    let coeff = lu.solve(&f_red);
    Ok(combine_basis(artifacts.grid, &artifacts.plain_basis, &coeff))
}

/// Classical reduced march of the advection problem on the comparison basis
/// (full-order operator evaluations projected each Newton iteration).
pub fn plain_advance_advection(
    artifacts: &OfflineArtifacts,
    alpha: f64,
    horizon: f64,
) -> Result<Vec<GridField>> {
    let ProblemSpec::Advection { base, .. } = &artifacts.problem else {
        return Err(Error::InvalidArgument(
            "artifacts were not trained for the advection problem".into(),
        ));
    };
    let space = FemSpace::with_dirichlet_boundary(artifacts.grid)?;
    let mut problem = base.clone();
    problem.alpha = alpha;
    let dt = problem.dt;
    let gamma = problem.gamma;
    let stepper = AdvectionStepper::new(&space, problem.clone());
    let basis = basis_vectors(&artifacts.plain_basis);
    let n = basis.len();
    let nn = artifacts.grid.node_count();
    let gram = h1_gram(&space);
    let mask = space.dirichlet_mask().to_vec();
    let mut init = problem.initial_field(&artifacts.grid).into_values();
    for (v, &m) in init.iter_mut().zip(&mask) {
        if m {
            *v = 0.0;
        }
    }
    let img = gram.matvec(&init);
    let mut coeff: Vec<f64> = basis.iter().map(|b| dot(b, &img)).collect();
    let expand = |c: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; nn];
        for (ck, b) in c.iter().zip(&basis) {
            for (o, x) in u.iter_mut().zip(b) {
                *o += ck * x;
            }
        }
        u
    };
    let steps = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(GridField::new(artifacts.grid, expand(&coeff))?);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for _ in 0..steps {
        let u0 = expand(&coeff);
        let mu0 = stepper.mass().matvec(&u0);
        let scale = 1.0 + basis.iter().map(|b| dot(b, &mu0).abs()).fold(0.0, f64::max);
        let tol = 1e-10 * scale;
        let mut c1 = coeff.clone();
        let mut converged = false;
        for _ in 0..25 {
            let u1 = expand(&c1);
            let um: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
            let du: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
            let mdu = stepper.mass().matvec(&du);
            let lum = stepper.linear().matvec(&um);
            let (nl, jac_nl) = stepper.nonlinear(&um, true);
            let full: Vec<f64> = (0..nn)
                .map(|i| mdu[i] + dt * (lum[i] + gamma * nl[i]))
                .collect();
            let g: Vec<f64> = basis.iter().map(|b| dot(b, &full)).collect();
            if inf(&g) <= tol {
                converged = true;
                break;
            }
            let jac_nl = jac_nl.expect("jacobian requested");
            // Dense reduced Jacobian: B^T (M + dt/2 (L + gamma J_N)) B.
            let mut jred = vec![0.0; n * n];
            for (l, b) in basis.iter().enumerate() {
                let mut col = stepper.mass().matvec(b);
                let lb = stepper.linear().matvec(b);
                let jb = jac_nl.matvec(b);
                for i in 0..nn {
                    col[i] += 0.5 * dt * (lb[i] + gamma * jb[i]);
                }
                for (k, bk) in basis.iter().enumerate() {
                    jred[k * n + l] = dot(bk, &col);
                }
            }
            let lu = DenseLu::factor(n, &jred)?;
            let deltac = lu.solve(&g);
            for (c, d) in c1.iter_mut().zip(&deltac) {
                *c -= d;
            }
        }
        if !converged {
            let u1 = expand(&c1);
            let um: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
            let du: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
            let mdu = stepper.mass().matvec(&du);
            let lum = stepper.linear().matvec(&um);
            let (nl, _) = stepper.nonlinear(&um, false);
            let full: Vec<f64> = (0..nn)
                .map(|i| mdu[i] + dt * (lum[i] + gamma * nl[i]))
                .collect();
            let g: Vec<f64> = basis.iter().map(|b| dot(b, &full)).collect();
            if inf(&g) > tol {
                return Err(Error::NewtonNonConvergence(25));
            }
        }
        coeff = c1;
        out.push(GridField::new(artifacts.grid, expand(&coeff))?);
    }
    Ok(out)
}

/// Location of the largest nodal value (peak-tracking diagnostics).
pub fn peak_position(field: &GridField) -> [f64; 2] {
    let mut best = 0;
    let mut bv = f64::NEG_INFINITY;
    for (i, &v) in field.values().iter().enumerate() {
        if v > bv {
            bv = v;
            best = i;
        }
    }
    field.grid().position(best)
}

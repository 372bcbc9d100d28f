//! Snapshot registration: correlation of transport potentials, transport
//! modes, boundary-compatible projection of potentials, and construction
//! plus soft inversion of the parameter-dependent mapping.

use crate::error::Error;
use crate::fem::{assemble_operator, boundary_normal_matrix, FemSpace, QuadCoeff};
use crate::grid::{normalize_density, GridDensity, GridField, GridVectorField, TensorGrid};
use crate::ot::softmin_ctransform;
use crate::pod::{pod_from_correlation, CorrelationMatrix};
use crate::Result;

/// A reference density together with one transport potential per snapshot.
#[derive(Debug, Clone)]
pub struct MongeEmbeddingSet {
    reference: GridDensity,
    potentials: Vec<GridField>,
    parameters: Vec<Vec<f64>>,
}

impl MongeEmbeddingSet {
    pub fn new(
        reference: GridDensity,
        potentials: Vec<GridField>,
        parameters: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if potentials.is_empty() {
            return Err(Error::InvalidArgument(
                "embedding set needs at least one potential".into(),
            ));
        }
        if parameters.len() != potentials.len() {
            return Err(Error::InvalidArgument(
                "one parameter vector per potential required".into(),
            ));
        }
        for p in &potentials {
            p.same_grid(reference.field())?;
        }
        Ok(MongeEmbeddingSet {
            reference,
            potentials,
            parameters,
        })
    }

    pub fn reference(&self) -> &GridDensity {
        &self.reference
    }

    pub fn potentials(&self) -> &[GridField] {
        &self.potentials
    }

    pub fn parameters(&self) -> &[Vec<f64>] {
        &self.parameters
    }

    pub fn len(&self) -> usize {
        self.potentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potentials.is_empty()
    }
}

/// Density-weighted gradient inner product of two fields.
pub fn gradient_inner(a: &GridField, b: &GridField, weight: &GridDensity) -> Result<f64> {
    a.same_grid(b)?;
    a.same_grid(weight.field())?;
    let ga = a.gradient();
    let gb = b.gradient();
    let mut total = 0.0;
    for axis in 0..a.grid().dim() {
        total += ga
            .component(axis)
            .inner_quad_weighted(gb.component(axis), weight.field())?;
    }
    Ok(total)
}

/// Correlation matrix of the potentials in the density-weighted gradient
/// inner product.
pub fn embedding_correlation(set: &MongeEmbeddingSet) -> Result<CorrelationMatrix> {
    let n = set.len();
    let grads: Vec<GridVectorField> = set.potentials().iter().map(GridField::gradient).collect();
    let dim = set.reference().grid().dim();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut v = 0.0;
            for axis in 0..dim {
                v += grads[i]
                    .component(axis)
                    .inner_quad_weighted(grads[j].component(axis), set.reference().field())?;
            }
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    CorrelationMatrix::new(n, entries)
}

/// Orthonormal (in the weighted gradient product) combinations of the
/// snapshot potentials, with their spectrum and snapshot coefficients.
#[derive(Debug, Clone)]
pub struct TransportModes {
    modes: Vec<GridField>,
    eigenvalues: Vec<f64>,
    /// `coefficients[j][i]` = coefficient of mode `j` at snapshot `i`.
    coefficients: Vec<Vec<f64>>,
    grid: TensorGrid,
}

impl TransportModes {
    /// Reassemble a mode set from stored parts (artifact loading).
    pub fn from_parts(
        grid: TensorGrid,
        modes: Vec<GridField>,
        eigenvalues: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if coefficients.len() != modes.len() {
            return Err(Error::InvalidArgument(format!(
                "expected one coefficient row per mode, got {} rows for {} modes",
                coefficients.len(),
                modes.len()
            )));
        }
        for m in &modes {
            if *m.grid() != grid {
                return Err(Error::GridMismatch);
            }
        }
        Ok(TransportModes {
            modes,
            eigenvalues,
            coefficients,
            grid,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[GridField] {
        &self.modes
    }

    pub fn mode(&self, j: usize) -> &GridField {
        &self.modes[j]
    }

    /// Full eigenvalue spectrum of the correlation matrix (not truncated).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    /// Coefficient vector `w(snapshot i)` across the retained modes.
    pub fn snapshot_coefficients(&self, i: usize) -> Vec<f64> {
        self.coefficients.iter().map(|c| c[i]).collect()
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    /// Drop all but the leading `m` modes (and their coefficients); the
    /// stored spectrum is kept in full for reporting.
    pub fn truncate(&mut self, m: usize) {
        self.modes.truncate(m);
        self.coefficients.truncate(m);
    }

    /// Combined potential `sum_j w_j xi_j`.
    pub fn combine(&self, w: &[f64]) -> GridField {
        assert_eq!(w.len(), self.mode_count());
        let mut out = GridField::zeros(self.grid);
        for (wj, m) in w.iter().zip(&self.modes) {
            out.add_scaled(m, *wj).expect("modes share one grid");
        }
        out
    }
}

/// Build transport modes by spectral truncation of the embedding
/// correlation at energy tolerance `tau`.  Modes are anchored to value
/// zero at the domain-center node.
pub fn build_transport_modes(set: &MongeEmbeddingSet, tau: f64) -> Result<TransportModes> {
    let corr = embedding_correlation(set)?;
    let basis = pod_from_correlation(&corr, tau)?;
    let grid = *set.reference().grid();
    let anchor = grid.center_node();
    let mut modes = Vec::with_capacity(basis.retained());
    let mut coefficients = Vec::with_capacity(basis.retained());
    for j in 0..basis.retained() {
        let weights = basis.mode_weights(j);
        let mut mode = GridField::zeros(grid);
        for (w, psi) in weights.iter().zip(set.potentials()) {
            mode.add_scaled(psi, *w)?;
        }
        let shift = mode.values()[anchor];
        let mode = mode.map(|v| v - shift);
        modes.push(mode);
        coefficients.push(
            (0..set.len())
                .map(|i| basis.snapshot_coefficient(j, i))
                .collect(),
        );
    }
    Ok(TransportModes {
        modes,
        eigenvalues: basis.eigenvalues().to_vec(),
        coefficients,
        grid,
    })
}

/// Penalty configuration of the boundary-compatible projection.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionConfig {
    /// Squared length scale of the gradient term.
    pub kappa2: f64,
    /// Boundary penalty (the weak form carries its inverse).
    pub delta: f64,
}

impl ProjectionConfig {
    /// Scale the gradient term with the inverse of the transport
    /// regularization parameter.
    pub fn from_epsilon(epsilon: f64) -> Self {
        ProjectionConfig {
            kappa2: 1.0 / epsilon,
            delta: 1e-9,
        }
    }
}

/// Project a potential onto the discretely boundary-compatible space:
/// solve `(S + kappa2 M + delta^{-1} Bn) psi = (S + kappa2 M) psi_pre`
/// where `Bn` couples boundary-normal derivatives to boundary tests.
/// With `kappa2 = 1/epsilon` the output bends to the zero-normal-slope
/// condition inside a boundary layer of width `kappa^{-1} = sqrt(epsilon)`
/// while the interior is left untouched.
pub fn h1_boundary_projection(psi_pre: &GridField, cfg: ProjectionConfig) -> Result<GridField> {
    let grid = *psi_pre.grid();
    let space = FemSpace::new(grid)?;
    let k2 = cfg.kappa2;
    let sm = assemble_operator(&space, |_, _| {
        Ok(QuadCoeff {
            diff: [[1.0, 0.0], [0.0, 1.0]],
            adv: [0.0, 0.0],
            mass: k2,
        })
    })?;
    let rhs = sm.matvec(psi_pre.values());
    let bn = boundary_normal_matrix(&space);
    let n = grid.node_count();
    let bw = space.bandwidth();
    let mut a = sm;
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let hi = (i + bw).min(n - 1);
        for j in lo..=hi {
            let v = bn.get(i, j);
            if v != 0.0 {
                a.add(i, j, v / cfg.delta);
            }
        }
    }
    let lu = a.factor()?;
    GridField::new(grid, lu.solve(&rhs))
}

/// Discrete boundary-normal derivative functional `Bn psi` reduced to its
/// max-norm over boundary rows (diagnostic used to verify the projection).
pub fn boundary_normal_defect(psi: &GridField) -> Result<f64> {
    let space = FemSpace::new(*psi.grid())?;
    let bn = boundary_normal_matrix(&space);
    let v = bn.matvec(psi.values());
    Ok(v
        .iter()
        .enumerate()
        .filter(|(i, _)| psi.grid().is_boundary(*i))
        .fold(0.0f64, |m, (_, x)| m.max(x.abs())))
}

/// Inverse mapping with its Jacobian and determinant diagnostics; the
/// forward map is attached once computed by [`invert_map`].
#[derive(Debug, Clone)]
pub struct MappingEvaluation {
    pub inverse_map: GridVectorField,
    pub forward_map: Option<GridVectorField>,
    /// Jacobian entries of the inverse map, row-major `[j00, j01, j10, j11]`
    /// (2D) or `[j00]` (1D).
    pub jacobian: Vec<GridField>,
    pub det: GridField,
    pub min_det: f64,
    pub roundtrip_sup_error: Option<f64>,
}

/// Hessian of a potential, row-major `dim x dim`, with boundary rows made
/// consistent with the zero-normal-slope boundary condition: the normal
/// second derivative uses the centered stencil implied by an even ghost-node
/// reflection, and the mixed derivative (the tangential derivative of the
/// vanishing normal slope) is pinned to zero on the boundary. One-sided
/// stencils are only first-order there and can overshoot badly.
///
/// Only meaningful for potentials whose normal slope actually vanishes on
/// the boundary, e.g. the output of [`h1_boundary_projection`].
pub fn boundary_consistent_hessian(f: &GridField) -> Vec<GridField> {
    let grid = *f.grid();
    let dim = grid.dim();
    let hess = f.hessian();
    let mut out = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            let mut entry = hess[r][c].clone();
            if r == c {
                let h = grid.spacing(r);
                let nr = grid.axis_nodes(r);
                let stride: isize = if r == 0 { 1 } else { grid.axis_nodes(0) as isize };
                let vals = f.values();
                for i in 0..grid.node_count() {
                    let mi = grid.multi_index(i);
                    let nb = if mi[r] == 0 {
                        (i as isize + stride) as usize
                    } else if mi[r] == nr - 1 {
                        (i as isize - stride) as usize
                    } else {
                        continue;
                    };
                    entry.values_mut()[i] = 2.0 * (vals[nb] - vals[i]) / (h * h);
                }
            } else {
                for i in 0..grid.node_count() {
                    if grid.is_boundary(i) {
                        entry.values_mut()[i] = 0.0;
                    }
                }
            }
            out.push(entry);
        }
    }
    out
}

/// Assemble the inverse map `y - grad(sum_j w_j xi_j)`, its Jacobian
/// `Id - Hessian`, and the determinant field.
pub fn build_inverse_map(modes: &TransportModes, w: &[f64]) -> MappingEvaluation {
    inverse_map_impl(modes, w, false)
}

/// Same as [`build_inverse_map`], but with the Jacobian's boundary rows
/// computed through [`boundary_consistent_hessian`]. This is the variant the
/// reduction pipeline uses, whose potentials are boundary-projected.
pub fn build_inverse_map_projected(modes: &TransportModes, w: &[f64]) -> MappingEvaluation {
    inverse_map_impl(modes, w, true)
}

fn inverse_map_impl(modes: &TransportModes, w: &[f64], projected: bool) -> MappingEvaluation {
    let grid = *modes.grid();
    let dim = grid.dim();
    let combined = modes.combine(w);
    let grad = combined.gradient();
    let mut inverse = GridVectorField::identity(grid);
    for axis in 0..dim {
        inverse
            .component_mut(axis)
            .add_scaled(grad.component(axis), -1.0)
            .expect("same grid");
    }
    let hess: Vec<GridField> = if projected {
        boundary_consistent_hessian(&combined)
    } else {
        combined.hessian().into_iter().flatten().collect()
    };
    let mut jacobian = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            let mut entry = hess[r * dim + c].map(|v| -v);
            if r == c {
                entry = entry.map(|v| v + 1.0);
            }
            jacobian.push(entry);
        }
    }
    let det = match dim {
        1 => jacobian[0].clone(),
        _ => {
            let n = grid.node_count();
            let vals: Vec<f64> = (0..n)
                .map(|i| {
                    jacobian[0].values()[i] * jacobian[3].values()[i]
                        - jacobian[1].values()[i] * jacobian[2].values()[i]
                })
                .collect();
            GridField::new(grid, vals).expect("finite determinant")
        }
    };
    let min_det = det.values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
    MappingEvaluation {
        inverse_map: inverse,
        forward_map: None,
        jacobian,
        det,
        min_det,
        roundtrip_sup_error: None,
    }
}

/// Check that `|y|^2/2 - sum w_j xi_j` has nonnegative per-axis second
/// differences at interior nodes (a sufficient condition for the soft
/// c-transform inversion to be reliable).
pub fn check_inversion_convexity(modes: &TransportModes, w: &[f64]) -> bool {
    let grid = *modes.grid();
    let combined = modes.combine(w);
    let half_sq = GridField::from_fn(grid, |p| p.iter().map(|x| 0.5 * x * x).sum());
    let mut f = half_sq;
    f.add_scaled(&combined, -1.0).expect("same grid");
    let scale = f.values().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for axis in 0..grid.dim() {
        let d2 = f.second_derivative(axis);
        for (i, &v) in d2.values().iter().enumerate() {
            let idx = grid.multi_index(i);
            if idx[axis] == 0 || idx[axis] == grid.axis_nodes(axis) - 1 {
                continue;
            }
            if v < -1e-10 * scale {
                return false;
            }
        }
    }
    true
}

/// Soft inversion of the mapping through the c-transform of the combined
/// potential against uniform weights; emits a warning when the convexity
/// precondition fails (and still returns the formal inverse).
pub fn invert_map(modes: &TransportModes, w: &[f64], eps_fine: f64) -> Result<GridVectorField> {
    let grid = *modes.grid();
    // A vanishing potential maps identically; the smoothed c-transform would
    // only blur what is known exactly.
    if w.iter().all(|&x| x == 0.0) {
        return Ok(GridVectorField::identity(grid));
    }
    if !check_inversion_convexity(modes, w) {
        eprintln!(
            "warning: combined potential violates the soft-inversion convexity condition; \
             the forward map may be unreliable"
        );
    }
    let combined = modes.combine(w);
    let uniform = normalize_density(&GridField::constant(grid, 1.0))?;
    let ct = softmin_ctransform(&combined, &uniform, eps_fine)?;
    let grad = ct.gradient();
    let mut forward = GridVectorField::identity(grid);
    for axis in 0..grid.dim() {
        forward
            .component_mut(axis)
            .add_scaled(grad.component(axis), -1.0)?;
    }
    Ok(forward)
}

/// Default fine regularization for the soft inversion: `h^2 / 10`.
pub fn default_inversion_epsilon(grid: &TensorGrid) -> f64 {
    let h = (0..grid.dim()).map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
    h * h / 10.0
}

/// Attach the forward map to a mapping evaluation and measure the
/// round-trip error `sup |Phi(Phi^{-1}(y)) - y|`.
pub fn attach_forward_map(eval: &mut MappingEvaluation, forward: GridVectorField) {
    let grid = *eval.inverse_map.grid();
    let mut sup = 0.0f64;
    for i in 0..grid.node_count() {
        let y = grid.position(i);
        let x = eval.inverse_map.at(i);
        for axis in 0..grid.dim() {
            let fwd = forward.component(axis).sample(&x[..grid.dim()]);
            sup = sup.max((fwd - y[axis]).abs());
        }
    }
    eval.forward_map = Some(forward);
    eval.roundtrip_sup_error = Some(sup);
}

/// Bijectivity diagnostics of a mapping evaluation.
#[derive(Debug, Clone)]
pub struct BijectivityReport {
    /// Minimum determinant of the inverse-map Jacobian over all nodes.
    pub min_det: f64,
    /// Max displacement of boundary nodes normal to their boundary face.
    pub max_boundary_normal_displacement: f64,
    /// Round-trip sup error, when a forward map is attached.
    pub roundtrip_sup_error: Option<f64>,
    pub det_positive: bool,
}

pub fn bijectivity_report(eval: &MappingEvaluation) -> BijectivityReport {
    let grid = *eval.inverse_map.grid();
    let mut max_disp = 0.0f64;
    for i in 0..grid.node_count() {
        if !grid.is_boundary(i) {
            continue;
        }
        let idx = grid.multi_index(i);
        let y = grid.position(i);
        let x = eval.inverse_map.at(i);
        for axis in 0..grid.dim() {
            if idx[axis] == 0 || idx[axis] == grid.axis_nodes(axis) - 1 {
                max_disp = max_disp.max((x[axis] - y[axis]).abs());
            }
        }
    }
    BijectivityReport {
        min_det: eval.min_det,
        max_boundary_normal_displacement: max_disp,
        roundtrip_sup_error: eval.roundtrip_sup_error,
        det_positive: eval.min_det > 0.0,
    }
}

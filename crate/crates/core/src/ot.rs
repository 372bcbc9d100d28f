//! Entropic optimal transport on tensor grids: Sinkhorn iterations in plain
//! and log domain, separable Gibbs-kernel contractions, the softmin
//! c-transform, Sinkhorn divergences, entropic barycenters and Monge maps.
//!
//! Grid densities are turned into discrete probability vectors by weighting
//! nodal values with trapezoidal quadrature weights, so the continuous
//! problem on the grid is exactly the discrete regularized problem with cost
//! `c(x, y) = ½|x − y|²`. The quadratic cost separates across axes, so a
//! kernel product on an `N`-node tensor grid in `d` dimensions costs
//! `d · N^{1+1/d}` operations instead of `N²`.

use crate::grid::{GridDensity, GridField, GridVectorField, TensorGrid};
use crate::{Error, Result};

/// Below this ε the plain-domain Gibbs kernel underflows to zero in double
/// precision on unit-scale domains, so the log-domain path is forced.
pub const LOG_DOMAIN_THRESHOLD: f64 = 1e-3;

/// Configuration of a Sinkhorn solve.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornConfig {
    /// Entropic regularization strength, in squared-length units.
    pub epsilon: f64,
    /// Stopping tolerance on the L¹ marginal residual.
    pub tol: f64,
    /// Iteration budget at the target ε; `None` means `⌈10/ε⌉`.
    pub max_iter: Option<usize>,
    /// Run the numerically robust log-domain path. Forced on automatically
    /// when `epsilon < LOG_DOMAIN_THRESHOLD`.
    pub log_domain: bool,
    /// ε-annealing: start at ε₀ = 1 and halve once per iteration until the
    /// target ε is reached, warm-starting each stage from the previous one.
    pub annealing: bool,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: 1e-3,
            max_iter: None,
            log_domain: epsilon < LOG_DOMAIN_THRESHOLD,
            annealing: false,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = Some(n);
        self
    }

    pub fn with_log_domain(mut self, on: bool) -> Self {
        self.log_domain = on;
        self
    }

    pub fn with_annealing(mut self, on: bool) -> Self {
        self.annealing = on;
        self
    }

    fn use_log_domain(&self) -> bool {
        self.log_domain || self.epsilon < LOG_DOMAIN_THRESHOLD
    }

    fn iter_budget(&self) -> usize {
        self.max_iter
            .unwrap_or_else(|| (10.0 / self.epsilon).ceil() as usize)
            .max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }

    /// The ε schedule: a geometric ramp from 1 down to the target when
    /// annealing is on, otherwise just the target.
    fn schedule(&self) -> Vec<f64> {
        if !self.annealing || self.epsilon >= 1.0 {
            return vec![self.epsilon];
        }
        let mut stages = Vec::new();
        let mut e = 1.0;
        while e > self.epsilon {
            stages.push(e);
            e *= 0.5;
        }
        stages.push(self.epsilon);
        stages
    }
}

/// Converged dual state of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// Potential on the ρ side, gauge-fixed to mean zero under ρ.
    pub psi_rho: GridField,
    /// Potential on the σ side (shifted oppositely by the gauge constant).
    pub psi_sigma: GridField,
    /// Final L¹ marginal residual.
    pub marginal_residual: f64,
    /// Total Sinkhorn iterations, including annealing stages.
    pub iterations: usize,
    /// Regularized transport value `∫ψ_ρ dρ + ∫ψ_σ dσ`.
    pub ot_eps_value: f64,
    /// Target regularization the potentials belong to.
    pub epsilon: f64,
}

/// Sinkhorn divergence value together with the four potentials entering it.
#[derive(Debug, Clone)]
pub struct DivergenceResult {
    /// `S_ε² = OT_ε(ρ,σ) − ½OT_ε(ρ,ρ) − ½OT_ε(σ,σ)`.
    pub value: f64,
    pub psi_rho_sigma: GridField,
    pub psi_sigma_rho: GridField,
    pub psi_rho_rho: GridField,
    pub psi_sigma_sigma: GridField,
    pub epsilon: f64,
}

/// Which side of a solve the Monge map should start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    RhoToSigma,
    SigmaToRho,
}

/// Quadrature-weighted nodal masses of a density, normalized to sum to 1.
pub fn discrete_masses(rho: &GridDensity) -> Vec<f64> {
    let g = rho.grid();
    let mut m: Vec<f64> = rho
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| g.quad_weight(i) * v)
        .collect();
    let total: f64 = m.iter().sum();
    for x in &mut m {
        *x /= total;
    }
    m
}

/// Half squared distance table along one axis, `c[i·n+j] = ½(x_i − x_j)²`.
fn axis_cost(grid: &TensorGrid, axis: usize) -> Vec<f64> {
    let n = grid.axis_nodes(axis);
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = grid.coordinate(axis, i) - grid.coordinate(axis, j);
            c[i * n + j] = 0.5 * d * d;
        }
    }
    c
}

/// Plain-domain kernel product `K v` via per-axis contractions.
fn kernel_apply_plain_raw(v: &[f64], grid: &TensorGrid, eps: f64) -> Vec<f64> {
    let n0 = grid.axis_nodes(0);
    let k0: Vec<f64> = axis_cost(grid, 0).iter().map(|c| (-c / eps).exp()).collect();
    if grid.dim() == 1 {
        let mut out = vec![0.0; n0];
        for i in 0..n0 {
            let row = &k0[i * n0..(i + 1) * n0];
            out[i] = row.iter().zip(v).map(|(k, x)| k * x).sum();
        }
        return out;
    }
    let n1 = grid.axis_nodes(1);
    let k1: Vec<f64> = axis_cost(grid, 1).iter().map(|c| (-c / eps).exp()).collect();
    // contract axis 0: tmp[i0, i1] = Σ_{j0} K0[i0, j0] v[j0, i1]
    let mut tmp = vec![0.0; v.len()];
    for i1 in 0..n1 {
        let col = &v[i1 * n0..(i1 + 1) * n0];
        let out_col = &mut tmp[i1 * n0..(i1 + 1) * n0];
        for i0 in 0..n0 {
            let row = &k0[i0 * n0..(i0 + 1) * n0];
            out_col[i0] = row.iter().zip(col).map(|(k, x)| k * x).sum();
        }
    }
    // contract axis 1: out[i0, i1] = Σ_{j1} K1[i1, j1] tmp[i0, j1]
    let mut out = vec![0.0; v.len()];
    for i1 in 0..n1 {
        let row = &k1[i1 * n1..(i1 + 1) * n1];
        for i0 in 0..n0 {
            let mut s = 0.0;
            for j1 in 0..n1 {
                s += row[j1] * tmp[j1 * n0 + i0];
            }
            out[i1 * n0 + i0] = s;
        }
    }
    out
}

/// LogSumExp over precollected terms; `−inf` inputs drop out cleanly.
#[inline]
fn lse(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + s.ln()
}

/// Log-domain kernel product: `log(K exp(la))` via per-axis LogSumExp.
fn kernel_apply_log_raw(la: &[f64], grid: &TensorGrid, eps: f64) -> Vec<f64> {
    let n0 = grid.axis_nodes(0);
    let c0 = axis_cost(grid, 0);
    let mut buf = vec![0.0; n0.max(grid.axis_nodes(1))];
    let contract_axis0 = |la: &[f64], out: &mut [f64], buf: &mut Vec<f64>| {
        let cols = la.len() / n0;
        for i1 in 0..cols {
            let col = &la[i1 * n0..(i1 + 1) * n0];
            for i0 in 0..n0 {
                buf.clear();
                let row = &c0[i0 * n0..(i0 + 1) * n0];
                for j0 in 0..n0 {
                    buf.push(col[j0] - row[j0] / eps);
                }
                out[i1 * n0 + i0] = lse(buf);
            }
        }
    };
    if grid.dim() == 1 {
        let mut out = vec![0.0; n0];
        contract_axis0(la, &mut out, &mut buf);
        return out;
    }
    let n1 = grid.axis_nodes(1);
    let c1 = axis_cost(grid, 1);
    let mut tmp = vec![0.0; la.len()];
    contract_axis0(la, &mut tmp, &mut buf);
    let mut out = vec![0.0; la.len()];
    for i1 in 0..n1 {
        let row = &c1[i1 * n1..(i1 + 1) * n1];
        for i0 in 0..n0 {
            buf.clear();
            for j1 in 0..n1 {
                buf.push(tmp[j1 * n0 + i0] - row[j1] / eps);
            }
            out[i1 * n0 + i0] = lse(&buf);
        }
    }
    out
}

/// Gibbs-kernel product `K a` (plain) or `log(K exp(a))` (log domain),
/// computed with per-axis tensor contractions.
pub fn kernel_apply(a: &GridField, eps: f64, log_domain: bool) -> Result<GridField> {
    let out = if log_domain {
        kernel_apply_log_raw(a.values(), a.grid(), eps)
    } else {
        kernel_apply_plain_raw(a.values(), a.grid(), eps)
    };
    GridField::new(*a.grid(), out)
}

fn log_masses(m: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Softmin c-transform against log-masses:
/// `ψ^{c,ε}_j = −ε · LSE_i[(ψ_i − C_ij)/ε + log m_i]`.
fn softmin_raw(psi: &[f64], log_m: &[f64], grid: &TensorGrid, eps: f64) -> Vec<f64> {
    let la: Vec<f64> = psi
        .iter()
        .zip(log_m)
        .map(|(p, lm)| p / eps + lm)
        .collect();
    kernel_apply_log_raw(&la, grid, eps)
        .into_iter()
        .map(|t| -eps * t)
        .collect()
}

/// Softmin c-transform of a potential against a weighting density. As
/// ε → 0 this converges to the hard c-transform `inf_x (c(x,y) − ψ(x))`
/// over the support of the weights.
pub fn softmin_ctransform(psi: &GridField, weights: &GridDensity, eps: f64) -> Result<GridField> {
    psi.same_grid(weights.field())?;
    let m = discrete_masses(weights);
    if m.iter().all(|&x| x <= 0.0) {
        return Err(Error::ZeroWeights);
    }
    let out = softmin_raw(psi.values(), &log_masses(&m), psi.grid(), eps);
    GridField::new(*psi.grid(), out)
}

/// Alternating dual ascent at one ε stage; `budget` limits iterations and
/// `tol < 0` disables the convergence check (used by annealing ramp stages).
struct StageOutcome {
    iterations: usize,
    residual: f64,
}

fn log_domain_stage(
    psi_r: &mut Vec<f64>,
    psi_s: &mut Vec<f64>,
    log_m_rho: &[f64],
    log_m_sigma: &[f64],
    m_rho: &[f64],
    grid: &TensorGrid,
    eps: f64,
    budget: usize,
    tol: f64,
) -> StageOutcome {
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..budget {
        *psi_s = softmin_raw(psi_r, log_m_rho, grid, eps);
        let s_rho = softmin_raw(psi_s, log_m_sigma, grid, eps);
        residual = m_rho
            .iter()
            .zip(psi_r.iter().zip(&s_rho))
            .map(|(m, (p, s))| m * (((p - s) / eps).exp() - 1.0).abs())
            .sum();
        *psi_r = s_rho;
        iterations += 1;
        if tol >= 0.0 && residual <= tol {
            break;
        }
    }
    StageOutcome {
        iterations,
        residual,
    }
}

fn plain_domain_stage(
    psi_r: &mut Vec<f64>,
    psi_s: &mut Vec<f64>,
    m_rho: &[f64],
    m_sigma: &[f64],
    grid: &TensorGrid,
    eps: f64,
    budget: usize,
    tol: f64,
) -> Result<StageOutcome> {
    let n = psi_r.len();
    let mut u: Vec<f64> = psi_r.iter().map(|p| (p / eps).exp()).collect();
    let finite_positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
    if !u.iter().all(|x| x.is_finite()) {
        return Err(Error::SinkhornOverflow);
    }
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut v = vec![0.0; n];
    for _ in 0..budget {
        let um: Vec<f64> = u.iter().zip(m_rho).map(|(a, m)| a * m).collect();
        let ku = kernel_apply_plain_raw(&um, grid, eps);
        if !finite_positive(&ku) {
            return Err(Error::SinkhornOverflow);
        }
        for j in 0..n {
            v[j] = 1.0 / ku[j];
        }
        let vm: Vec<f64> = v.iter().zip(m_sigma).map(|(b, m)| b * m).collect();
        let kv = kernel_apply_plain_raw(&vm, grid, eps);
        if !finite_positive(&kv) {
            return Err(Error::SinkhornOverflow);
        }
        residual = (0..n).map(|i| m_rho[i] * (u[i] * kv[i] - 1.0).abs()).sum();
        for i in 0..n {
            u[i] = 1.0 / kv[i];
        }
        iterations += 1;
        if tol >= 0.0 && residual <= tol {
            break;
        }
    }
    for i in 0..n {
        psi_r[i] = eps * u[i].ln();
        psi_s[i] = eps * v[i].ln();
    }
    if !psi_r.iter().chain(psi_s.iter()).all(|x| x.is_finite()) {
        return Err(Error::SinkhornOverflow);
    }
    Ok(StageOutcome {
        iterations,
        residual,
    })
}

/// Solve the regularized transport problem between two densities on a shared
/// grid with Sinkhorn iterations, stopping on the L¹ marginal residual.
pub fn sinkhorn_solve(
    rho: &GridDensity,
    sigma: &GridDensity,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    sinkhorn_solve_warm(rho, sigma, cfg, None)
}

/// Like [`sinkhorn_solve`] but optionally warm-started from previously
/// converged potentials at the same ε (e.g. from a neighboring snapshot).
pub fn sinkhorn_solve_warm(
    rho: &GridDensity,
    sigma: &GridDensity,
    cfg: &SinkhornConfig,
    warm: Option<(&GridField, &GridField)>,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    if rho.grid() != sigma.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *rho.grid();
    let m_rho = discrete_masses(rho);
    let m_sigma = discrete_masses(sigma);
    let log_m_rho = log_masses(&m_rho);
    let log_m_sigma = log_masses(&m_sigma);

    let mut psi_r = match warm {
        Some((pr, _)) => pr.values().to_vec(),
        None => vec![0.0; grid.node_count()],
    };
    let mut psi_s = match warm {
        Some((_, ps)) => ps.values().to_vec(),
        None => vec![0.0; grid.node_count()],
    };

    let stages = cfg.schedule();
    let use_log = cfg.use_log_domain();
    let mut total_iterations = 0;
    let mut residual = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let (budget, tol) = if last {
            (cfg.iter_budget(), cfg.tol)
        } else {
            (1, -1.0)
        };
        // ramp stages above the log threshold may use the fast plain path
        let outcome = if use_log && (last || eps < LOG_DOMAIN_THRESHOLD) {
            log_domain_stage(
                &mut psi_r, &mut psi_s, &log_m_rho, &log_m_sigma, &m_rho, &grid, eps, budget, tol,
            )
        } else {
            plain_domain_stage(
                &mut psi_r, &mut psi_s, &m_rho, &m_sigma, &grid, eps, budget, tol,
            )?
        };
        total_iterations += outcome.iterations;
        residual = outcome.residual;
        if last && residual > cfg.tol {
            return Err(Error::SinkhornMaxIter {
                iterations: total_iterations,
                residual,
            });
        }
    }

    // gauge: mean-zero ψ_ρ under ρ; the pair shifts as (ψ_ρ − κ, ψ_σ + κ)
    let kappa: f64 = psi_r.iter().zip(&m_rho).map(|(p, m)| p * m).sum();
    for p in &mut psi_r {
        *p -= kappa;
    }
    for p in &mut psi_s {
        *p += kappa;
    }
    let value: f64 = psi_r.iter().zip(&m_rho).map(|(p, m)| p * m).sum::<f64>()
        + psi_s.iter().zip(&m_sigma).map(|(p, m)| p * m).sum::<f64>();
    Ok(SinkhornResult {
        psi_rho: GridField::new(grid, psi_r)?,
        psi_sigma: GridField::new(grid, psi_s)?,
        marginal_residual: residual,
        iterations: total_iterations,
        ot_eps_value: value,
        epsilon: cfg.epsilon,
    })
}

/// Symmetric self-transport potential of a density: the fixed point of
/// `ψ ← ½(ψ + ψ^{c,ε})` under ρ-weighting. Returns the potential, the value
/// `OT_ε(ρ,ρ) = 2∫ψ dρ` and the iteration count.
pub fn sinkhorn_self_solve(
    rho: &GridDensity,
    cfg: &SinkhornConfig,
) -> Result<(GridField, f64, usize)> {
    sinkhorn_self_solve_warm(rho, cfg, None)
}

pub fn sinkhorn_self_solve_warm(
    rho: &GridDensity,
    cfg: &SinkhornConfig,
    warm: Option<&GridField>,
) -> Result<(GridField, f64, usize)> {
    cfg.validate()?;
    let grid = *rho.grid();
    let m = discrete_masses(rho);
    let log_m = log_masses(&m);
    let mut psi = match warm {
        Some(p) => p.values().to_vec(),
        None => vec![0.0; grid.node_count()],
    };
    let stages = cfg.schedule();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let budget = if last { cfg.iter_budget() } else { 1 };
        for _ in 0..budget {
            let s = softmin_raw(&psi, &log_m, &grid, eps);
            residual = m
                .iter()
                .zip(psi.iter().zip(&s))
                .map(|(mi, (p, si))| mi * (((p - si) / eps).exp() - 1.0).abs())
                .sum();
            for (p, si) in psi.iter_mut().zip(&s) {
                *p = 0.5 * (*p + si);
            }
            iterations += 1;
            if last && residual <= cfg.tol {
                break;
            }
        }
        if last && residual > cfg.tol {
            return Err(Error::SinkhornMaxIter {
                iterations,
                residual,
            });
        }
    }
    let value = 2.0 * psi.iter().zip(&m).map(|(p, mi)| p * mi).sum::<f64>();
    Ok((GridField::new(grid, psi)?, value, iterations))
}

/// Sinkhorn divergence `S_ε²` with its four potentials. For identical
/// inputs the symmetric potential is used on both sides, making the value
/// exactly zero.
pub fn sinkhorn_divergence(
    rho: &GridDensity,
    sigma: &GridDensity,
    cfg: &SinkhornConfig,
) -> Result<DivergenceResult> {
    if rho.grid() != sigma.grid() {
        return Err(Error::GridMismatch);
    }
    let m_rho = discrete_masses(rho);
    let m_sigma = discrete_masses(sigma);
    let (psi_rr, _, _) = sinkhorn_self_solve(rho, cfg)?;
    if rho == sigma {
        return Ok(DivergenceResult {
            value: 0.0,
            psi_rho_sigma: psi_rr.clone(),
            psi_sigma_rho: psi_rr.clone(),
            psi_sigma_sigma: psi_rr.clone(),
            psi_rho_rho: psi_rr,
            epsilon: cfg.epsilon,
        });
    }
    let (psi_ss, _, _) = sinkhorn_self_solve(sigma, cfg)?;
    let cross = sinkhorn_solve(rho, sigma, cfg)?;
    let dot = |f: &GridField, m: &[f64]| -> f64 {
        f.values().iter().zip(m).map(|(a, b)| a * b).sum()
    };
    let value = dot(&cross.psi_rho, &m_rho) - dot(&psi_rr, &m_rho) + dot(&cross.psi_sigma, &m_sigma)
        - dot(&psi_ss, &m_sigma);
    Ok(DivergenceResult {
        value,
        psi_rho_sigma: cross.psi_rho,
        psi_sigma_rho: cross.psi_sigma,
        psi_rho_rho: psi_rr,
        psi_sigma_sigma: psi_ss,
        epsilon: cfg.epsilon,
    })
}

/// Entropic Monge map `T = id − ∇ψ`, optionally debiased by adding back the
/// gradient of the self-transport potential.
pub fn entropic_monge_map(
    result: &SinkhornResult,
    direction: MapDirection,
    debias_correction: Option<&GridField>,
) -> Result<GridVectorField> {
    let psi = match direction {
        MapDirection::RhoToSigma => &result.psi_rho,
        MapDirection::SigmaToRho => &result.psi_sigma,
    };
    monge_map_from_potential(psi, debias_correction)
}

/// Map construction from a bare potential (used by the registration stage
/// where potentials have been projected or recombined before mapping).
pub fn monge_map_from_potential(
    psi: &GridField,
    debias_correction: Option<&GridField>,
) -> Result<GridVectorField> {
    let grid = *psi.grid();
    let grad = psi.gradient();
    let mut map = GridVectorField::identity(grid);
    for a in 0..grid.dim() {
        map.component_mut(a).add_scaled(grad.component(a), -1.0)?;
    }
    if let Some(self_psi) = debias_correction {
        let self_grad = self_psi.gradient();
        for a in 0..grid.dim() {
            map.component_mut(a)
                .add_scaled(self_grad.component(a), 1.0)?;
        }
    }
    Ok(map)
}

/// Pointwise density of the optimal plan,
/// `π(x, y) = ρ(x)σ(y)exp((ψ_ρ(x) + ψ_σ(y) − c(x,y))/ε)`, evaluated by
/// interpolating the potentials; never materializes the N² plan.
pub fn eval_plan_density(
    result: &SinkhornResult,
    rho: &GridDensity,
    sigma: &GridDensity,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let d = rho.grid().dim();
    let mut c = 0.0;
    for a in 0..d {
        c += 0.5 * (x[a] - y[a]).powi(2);
    }
    let pr = result.psi_rho.sample(x);
    let ps = result.psi_sigma.sample(y);
    let rv = rho.field().sample(x);
    let sv = sigma.field().sample(y);
    rv * sv * ((pr + ps - c) / result.epsilon).exp()
}

/// Configuration of a barycenter computation.
#[derive(Debug, Clone, Copy)]
pub struct BarycenterConfig {
    pub epsilon: f64,
    /// Stopping tolerance on the L¹ change of the barycenter masses.
    pub tol: f64,
    pub max_iter: usize,
    /// Debiased fixed point (divergence-based) vs the biased one with the
    /// product-measure reference.
    pub debias: bool,
    /// Mirror-descent step for the biased fixed point, as a fraction of ε.
    pub step: f64,
}

impl BarycenterConfig {
    pub fn new(epsilon: f64, debias: bool) -> Self {
        Self {
            epsilon,
            tol: 1e-6,
            max_iter: 5000,
            debias,
            step: 0.5,
        }
    }
}

fn validate_barycenter_inputs(densities: &[GridDensity], weights: &[f64]) -> Result<()> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching nonempty density/weight lists, got {} / {}",
            densities.len(),
            weights.len()
        )));
    }
    let g = densities[0].grid();
    if densities.iter().any(|d| d.grid() != g) {
        return Err(Error::GridMismatch);
    }
    if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(
            "weights must be nonnegative and sum to 1".into(),
        ));
    }
    Ok(())
}

fn masses_to_density(grid: &TensorGrid, masses: &[f64]) -> Result<GridDensity> {
    let values: Vec<f64> = masses
        .iter()
        .enumerate()
        .map(|(i, &m)| (m / grid.quad_weight(i)).max(0.0))
        .collect();
    crate::grid::normalize_density(&GridField::new(*grid, values)?)
}

/// Entropic barycenter of weighted densities on a common grid.
pub fn entropic_barycenter(
    densities: &[GridDensity],
    weights: &[f64],
    epsilon: f64,
    debias: bool,
) -> Result<GridDensity> {
    entropic_barycenter_cfg(densities, weights, &BarycenterConfig::new(epsilon, debias))
        .map(|(d, _)| d)
}

pub fn entropic_barycenter_cfg(
    densities: &[GridDensity],
    weights: &[f64],
    cfg: &BarycenterConfig,
) -> Result<(GridDensity, usize)> {
    validate_barycenter_inputs(densities, weights)?;
    if cfg.debias {
        debiased_barycenter(densities, weights, cfg)
    } else {
        biased_barycenter(densities, weights, cfg)
    }
}

/// Debiased fixed point: the log-domain scaling scheme with the extra
/// self-correction vector `d`, which removes the entropic blur so that
/// Gaussian inputs reproduce their common variance.
fn debiased_barycenter(
    densities: &[GridDensity],
    weights: &[f64],
    cfg: &BarycenterConfig,
) -> Result<(GridDensity, usize)> {
    let grid = *densities[0].grid();
    let n = grid.node_count();
    let k = densities.len();
    let eps = cfg.epsilon;
    let log_r: Vec<Vec<f64>> = densities
        .iter()
        .map(|d| log_masses(&discrete_masses(d)))
        .collect();
    let mut lb = vec![vec![0.0; n]; k];
    let mut ld = vec![0.0; n];
    let mut alpha_prev = vec![1.0 / n as f64; n];
    let mut last_change = f64::INFINITY;
    for outer in 1..=cfg.max_iter {
        let mut lalpha = ld.clone();
        let mut lphi = Vec::with_capacity(k);
        for j in 0..k {
            let kb = kernel_apply_log_raw(&lb[j], &grid, eps);
            let la: Vec<f64> = log_r[j]
                .iter()
                .zip(&kb)
                .map(|(lr, t)| lr - t)
                .collect();
            let phi = kernel_apply_log_raw(&la, &grid, eps);
            for i in 0..n {
                lalpha[i] += weights[j] * phi[i];
            }
            lphi.push(phi);
        }
        for j in 0..k {
            for i in 0..n {
                lb[j][i] = lalpha[i] - lphi[j][i];
            }
        }
        let kd = kernel_apply_log_raw(&ld, &grid, eps);
        for i in 0..n {
            ld[i] = 0.5 * (ld[i] + lalpha[i] - kd[i]);
        }
        let alpha: Vec<f64> = lalpha.iter().map(|l| l.exp()).collect();
        let total: f64 = alpha.iter().sum();
        let alpha: Vec<f64> = alpha.iter().map(|a| a / total).collect();
        let change: f64 = alpha
            .iter()
            .zip(&alpha_prev)
            .map(|(a, b)| (a - b).abs())
            .sum();
        alpha_prev = alpha;
        last_change = change;
        if change <= cfg.tol {
            return Ok((masses_to_density(&grid, &alpha_prev)?, outer));
        }
    }
    Err(Error::BarycenterMaxIter {
        iterations: cfg.max_iter,
        change: last_change,
    })
}

/// Biased fixed point under the product-measure reference: mirror descent
/// on the simplex driven by the α-side potentials of each pairwise solve,
/// `log α ← log α − (step/ε) Σ_k ω_k ψ_k`, warm-starting every inner solve.
fn biased_barycenter(
    densities: &[GridDensity],
    weights: &[f64],
    cfg: &BarycenterConfig,
) -> Result<(GridDensity, usize)> {
    let grid = *densities[0].grid();
    let n = grid.node_count();
    let k = densities.len();
    let eps = cfg.epsilon;
    // start from the mixture
    let mut alpha = vec![0.0; n];
    for j in 0..k {
        let m = discrete_masses(&densities[j]);
        for i in 0..n {
            alpha[i] += weights[j] * m[i];
        }
    }
    let inner_cfg = SinkhornConfig::new(eps).with_tol(cfg.tol / 10.0);
    let mut warm: Vec<Option<(GridField, GridField)>> = vec![None; k];
    let mut last_change = f64::INFINITY;
    // Fixed-step mirror descent can cycle when the potentials are large
    // relative to epsilon; damp the step whenever progress stalls.
    let mut step = cfg.step;
    for outer in 1..=cfg.max_iter {
        let alpha_density = masses_to_density(&grid, &alpha)?;
        let mut grad = vec![0.0; n];
        for j in 0..k {
            let res = sinkhorn_solve_warm(
                &alpha_density,
                &densities[j],
                &inner_cfg,
                warm[j].as_ref().map(|(a, b)| (a, b)),
            )?;
            for i in 0..n {
                grad[i] += weights[j] * res.psi_rho.values()[i];
            }
            warm[j] = Some((res.psi_rho, res.psi_sigma));
        }
        let mut lalpha: Vec<f64> = alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| {
                (if *a > 0.0 {
                    a.ln()
                } else {
                    f64::NEG_INFINITY
                }) - step * g / eps
            })
            .collect();
        let shift = lse(&lalpha);
        for l in &mut lalpha {
            *l -= shift;
        }
        let alpha_new: Vec<f64> = lalpha.iter().map(|l| l.exp()).collect();
        let change: f64 = alpha_new
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .sum();
        alpha = alpha_new;
        if change > last_change {
            step = (0.5 * step).max(cfg.step / 1024.0);
        }
        last_change = change;
        if change <= cfg.tol {
            return Ok((masses_to_density(&grid, &alpha)?, outer));
        }
    }
    Err(Error::BarycenterMaxIter {
        iterations: cfg.max_iter,
        change: last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::normalize_density;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_1d(grid: TensorGrid, mean: f64, var: f64) -> GridDensity {
        normalize_density(&GridField::from_fn(grid, |p| {
            (-(p[0] - mean).powi(2) / (2.0 * var)).exp()
        }))
        .unwrap()
    }

    fn dense_kernel(grid: &TensorGrid, eps: f64) -> Vec<f64> {
        let n = grid.node_count();
        let d = grid.dim();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            let xi = grid.position(i);
            for j in 0..n {
                let xj = grid.position(j);
                let mut c = 0.0;
                for a in 0..d {
                    c += 0.5 * (xi[a] - xj[a]).powi(2);
                }
                k[i * n + j] = (-c / eps).exp();
            }
        }
        k
    }

    #[test]
    fn kernel_apply_matches_dense_2d() {
        let grid = TensorGrid::unit(2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = GridField::new(
            grid,
            (0..grid.node_count()).map(|_| rng.gen_range(0.1..2.0)).collect(),
        )
        .unwrap();
        let eps = 3e-2;
        let k = dense_kernel(&grid, eps);
        let dense = crate::linalg::dense_matvec(grid.node_count(), &k, a.values());
        let fast = kernel_apply(&a, eps, false).unwrap();
        for (f, d) in fast.values().iter().zip(&dense) {
            assert!((f - d).abs() < 1e-12, "plain path");
        }
        // log path on log inputs reproduces the same product
        let la = a.map(|v| v.ln());
        let fast_log = kernel_apply(&la, eps, true).unwrap();
        for (f, d) in fast_log.values().iter().zip(&dense) {
            assert!((f.exp() - d).abs() < 1e-10 * d.max(1.0), "log path");
        }
    }

    #[test]
    fn kernel_apply_indicator_row() {
        let grid = TensorGrid::unit(1, 17).unwrap();
        let eps = 1e-1;
        let node = 5;
        let mut v = vec![0.0; 17];
        v[node] = 1.0;
        let out = kernel_apply(&GridField::new(grid, v).unwrap(), eps, false).unwrap();
        for i in 0..17 {
            let d = grid.coordinate(0, i) - grid.coordinate(0, node);
            let want = (-0.5 * d * d / eps).exp();
            assert!((out.values()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_apply_matches_dense_various_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for grid in [
            TensorGrid::unit(1, 31).unwrap(),
            TensorGrid::new(2, &[7, 11], &[[0.0, 1.0], [0.0, 2.0]]).unwrap(),
            TensorGrid::unit(2, 17).unwrap(),
        ] {
            let n = grid.node_count();
            assert!(n <= 1000);
            let a = GridField::new(grid, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
            let eps = 5e-2;
            let k = dense_kernel(&grid, eps);
            let dense = crate::linalg::dense_matvec(n, &k, a.values());
            let fast = kernel_apply(&a, eps, false).unwrap();
            for (f, d) in fast.values().iter().zip(&dense) {
                assert!((f - d).abs() < 1e-10);
            }
        }
    }

    fn point_mass(grid: TensorGrid, node: usize) -> GridDensity {
        let mut v = vec![0.0; grid.node_count()];
        v[node] = 1.0 / grid.quad_weight(node);
        GridDensity::new(GridField::new(grid, v).unwrap()).unwrap()
    }

    #[test]
    fn softmin_point_mass_is_cost_row() {
        let grid = TensorGrid::unit(1, 33).unwrap();
        let node = 10;
        let w = point_mass(grid, node);
        let psi = GridField::zeros(grid);
        for &eps in &[1e-1, 1e-2, 1e-3] {
            let out = softmin_ctransform(&psi, &w, eps).unwrap();
            for j in 0..33 {
                let d = grid.coordinate(0, j) - grid.coordinate(0, node);
                assert!((out.values()[j] - 0.5 * d * d).abs() < 1e-12, "eps = {eps}");
            }
        }
    }

    #[test]
    fn softmin_small_eps_hard_min() {
        let grid = TensorGrid::unit(1, 101).unwrap();
        let w = normalize_density(&GridField::constant(grid, 1.0)).unwrap();
        let psi = GridField::zeros(grid);
        let out = softmin_ctransform(&psi, &w, 1e-6).unwrap();
        // at y = 0 the hard infimum of ½|x−y|² over the grid is 0
        assert!(out.values()[0].abs() <= 1e-4);
        // compare against the brute-force hard min at a few nodes
        let m = discrete_masses(&w);
        for &j in &[0, 25, 50, 99] {
            let y = grid.coordinate(0, j);
            let hard = (0..101)
                .filter(|&i| m[i] > 0.0)
                .map(|i| 0.5 * (grid.coordinate(0, i) - y).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert!((out.values()[j] - hard).abs() < 1e-4, "node {j}");
        }
    }

    #[test]
    fn softmin_soft_convexity() {
        // ½|y|² − ψ^{c,ε} must have nonnegative discrete second differences
        let grid = TensorGrid::unit(1, 65).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let psi = GridField::new(
                grid,
                (0..65).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            )
            .unwrap();
            let w = normalize_density(&GridField::from_fn(grid, |p| {
                0.1 + (7.0 * p[0] + trial as f64).sin().abs()
            }))
            .unwrap();
            let eps = rng.gen_range(1e-3..1e-1);
            let out = softmin_ctransform(&psi, &w, eps).unwrap();
            let conv: Vec<f64> = (0..65)
                .map(|i| {
                    let y = grid.coordinate(0, i);
                    0.5 * y * y - out.values()[i]
                })
                .collect();
            for i in 1..64 {
                let second = conv[i - 1] - 2.0 * conv[i] + conv[i + 1];
                assert!(second >= -1e-10, "trial {trial}, node {i}: {second}");
            }
        }
    }

    #[test]
    fn sinkhorn_identical_marginals_symmetric() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.5, 1e-2);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-10).with_max_iter(50_000);
        let res = sinkhorn_solve(&rho, &rho, &cfg).unwrap();
        assert!(res.marginal_residual <= 1e-10);
        // symmetric solution: the two potentials agree up to the gauge pair
        // (+κ, −κ), i.e. their difference is constant
        let diff: Vec<f64> = res
            .psi_rho
            .values()
            .iter()
            .zip(res.psi_sigma.values())
            .map(|(a, b)| a - b)
            .collect();
        for d in &diff {
            assert!((d - diff[0]).abs() < 1e-7);
        }
        // OT_ε(ρ,ρ) is generally nonzero
        assert!(res.ot_eps_value.abs() > 1e-8);
    }

    #[test]
    fn sinkhorn_point_mass_trivial() {
        let grid = TensorGrid::unit(1, 9).unwrap();
        let rho = point_mass(grid, 4);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-12).with_max_iter(5);
        let res = sinkhorn_solve(&rho, &rho, &cfg).unwrap();
        // potential at the support node is zero (after mean-zero gauge) and
        // the transport value vanishes
        assert!(res.psi_rho.values()[4].abs() < 1e-12);
        assert!(res.ot_eps_value.abs() < 1e-12);
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn sinkhorn_log_plain_agree() {
        let grid = TensorGrid::unit(1, 129).unwrap();
        let rho = gaussian_1d(grid, 0.35, 5e-3);
        let sigma = gaussian_1d(grid, 0.65, 5e-3);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-9).with_max_iter(100_000);
        let plain = sinkhorn_solve(&rho, &sigma, &cfg.with_log_domain(false)).unwrap();
        let logd = sinkhorn_solve(&rho, &sigma, &cfg.with_log_domain(true)).unwrap();
        for (a, b) in plain
            .psi_rho
            .values()
            .iter()
            .zip(logd.psi_rho.values())
        {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in plain
            .psi_sigma
            .values()
            .iter()
            .zip(logd.psi_sigma.values())
        {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sinkhorn_tiny_eps_forces_log_domain() {
        let cfg = SinkhornConfig::new(5e-4);
        assert!(cfg.use_log_domain());
    }

    #[test]
    fn sinkhorn_max_iter_error() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.2, 2e-3);
        let sigma = gaussian_1d(grid, 0.8, 2e-3);
        let cfg = SinkhornConfig::new(1e-3).with_tol(1e-12).with_max_iter(3);
        match sinkhorn_solve(&rho, &sigma, &cfg) {
            Err(Error::SinkhornMaxIter { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected max-iter error, got {other:?}"),
        }
    }

    #[test]
    fn monge_map_translation() {
        // ψ(y) = −a·y gives T(y) = y + a
        let grid = TensorGrid::unit(1, 33).unwrap();
        let a = 0.3;
        let psi = GridField::from_fn(grid, |p| -a * p[0]);
        let map = monge_map_from_potential(&psi, None).unwrap();
        for i in 0..33 {
            let y = grid.coordinate(0, i);
            assert!((map.component(0).values()[i] - (y + a)).abs() < 1e-12);
        }
        // constant potential gives the identity
        let id = monge_map_from_potential(&GridField::constant(grid, 7.0), None).unwrap();
        for i in 0..33 {
            assert!((id.component(0).values()[i] - grid.coordinate(0, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn monge_map_gaussian_shift() {
        let grid = TensorGrid::unit(1, 257).unwrap();
        let rho = gaussian_1d(grid, 0.35, 5e-3);
        let sigma = gaussian_1d(grid, 0.65, 5e-3);
        let eps = 1e-3;
        let cfg = SinkhornConfig::new(eps).with_tol(1e-6);
        let res = sinkhorn_solve(&rho, &sigma, &cfg).unwrap();
        let map = entropic_monge_map(&res, MapDirection::RhoToSigma, None).unwrap();
        // on the bulk of the source mass the map is x ↦ x + 0.3, up to O(√ε)
        let tol = 3.0 * eps.sqrt();
        for i in 0..257 {
            let x = grid.coordinate(0, i);
            if (x - 0.35).abs() < 2.0 * (5e-3f64).sqrt() {
                let got = map.component(0).values()[i];
                assert!((got - (x + 0.3)).abs() < tol, "x = {x}: {got}");
            }
        }
    }

    #[test]
    fn monge_map_matches_1d_oracle() {
        // boundary-layer pair: the entropic map converges to the cdf map
        let grid = TensorGrid::unit(1, 257).unwrap();
        let fam = crate::ot1d::BoundaryLayerFamily::new(3.0, 0.5).unwrap();
        let mu_bar = fam.mu_bar();
        let mu = 8.0;
        let rho = normalize_density(&GridField::from_fn(grid, |p| {
            crate::ot1d::boundary_layer_density(mu_bar, p[0])
        }))
        .unwrap();
        let sigma = normalize_density(&GridField::from_fn(grid, |p| {
            crate::ot1d::boundary_layer_density(mu, p[0])
        }))
        .unwrap();
        let m_rho = discrete_masses(&rho);
        let mut errs = Vec::new();
        for &eps in &[4e-3, 1e-3] {
            let cfg = SinkhornConfig::new(eps).with_tol(1e-6).with_annealing(true);
            let res = sinkhorn_solve(&rho, &sigma, &cfg).unwrap();
            let map = entropic_monge_map(&res, MapDirection::RhoToSigma, None).unwrap();
            let mut acc = 0.0;
            for i in 0..257 {
                let y = grid.coordinate(0, i);
                let exact = crate::ot1d::boundary_layer_map(mu_bar, mu, y);
                acc += m_rho[i] * (map.component(0).values()[i] - exact).powi(2);
            }
            let err = acc.sqrt();
            assert!(err < 3.0 * eps.sqrt(), "eps = {eps}: err {err}");
            errs.push(err);
        }
        // smaller ε must not be worse
        assert!(errs[1] <= errs[0] * 1.5);
    }

    #[test]
    fn divergence_zero_on_identical() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.4, 8e-3);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-8).with_max_iter(50_000);
        let div = sinkhorn_divergence(&rho, &rho, &cfg).unwrap();
        assert!(div.value.abs() < 1e-10);
    }

    #[test]
    fn divergence_symmetric_and_nonnegative() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-8).with_max_iter(100_000);
        for _ in 0..5 {
            let m1: f64 = rng.gen_range(0.25..0.45);
            let m2: f64 = rng.gen_range(0.55..0.75);
            let rho = gaussian_1d(grid, m1, 6e-3);
            let sigma = gaussian_1d(grid, m2, 9e-3);
            let fwd = sinkhorn_divergence(&rho, &sigma, &cfg).unwrap();
            let bwd = sinkhorn_divergence(&sigma, &rho, &cfg).unwrap();
            assert!(fwd.value >= -1e-9, "nonnegative: {}", fwd.value);
            assert!((fwd.value - bwd.value).abs() < 1e-6, "symmetric");
        }
    }

    #[test]
    fn divergence_limit_is_half_squared_shift() {
        // shifted Gaussians: S_ε² → ½Δ² as ε → 0 (the exact OT value)
        let grid = TensorGrid::unit(1, 257).unwrap();
        let delta = 0.3;
        let rho = gaussian_1d(grid, 0.35, 5e-3);
        let sigma = gaussian_1d(grid, 0.65, 5e-3);
        let exact = 0.5 * delta * delta;
        let cfg = SinkhornConfig::new(1e-3).with_tol(1e-7).with_annealing(true);
        let div = sinkhorn_divergence(&rho, &sigma, &cfg).unwrap();
        assert!(
            (div.value - exact).abs() < 0.05 * exact,
            "S² = {} vs {exact}",
            div.value
        );
    }

    #[test]
    fn plan_density_matches_dense_formula() {
        let grid = TensorGrid::unit(1, 33).unwrap();
        let rho = gaussian_1d(grid, 0.4, 1e-2);
        let sigma = gaussian_1d(grid, 0.6, 1e-2);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-9).with_max_iter(100_000);
        let res = sinkhorn_solve(&rho, &sigma, &cfg).unwrap();
        for i in (0..33).step_by(7) {
            for j in (0..33).step_by(5) {
                let x = [grid.coordinate(0, i), 0.0];
                let y = [grid.coordinate(0, j), 0.0];
                let dense = rho.values()[i]
                    * sigma.values()[j]
                    * ((res.psi_rho.values()[i] + res.psi_sigma.values()[j]
                        - 0.5 * (x[0] - y[0]).powi(2))
                        / res.epsilon)
                        .exp();
                let got = eval_plan_density(&res, &rho, &sigma, &x[..1], &y[..1]);
                assert!((got - dense).abs() <= 1e-12 * dense.max(1.0));
            }
        }
    }

    #[test]
    fn plan_marginals_recovered() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.4, 8e-3);
        let sigma = gaussian_1d(grid, 0.55, 8e-3);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-8).with_max_iter(100_000);
        let res = sinkhorn_solve(&rho, &sigma, &cfg).unwrap();
        // integrate the plan density over y with quadrature: recovers ρ(x)
        let mut max_rel = 0.0f64;
        for i in (0..65).step_by(9) {
            let x = [grid.coordinate(0, i)];
            let mut marg = 0.0;
            for j in 0..65 {
                let y = [grid.coordinate(0, j)];
                marg += grid.quad_weight(j) * eval_plan_density(&res, &rho, &sigma, &x, &y);
            }
            if rho.values()[i] > 1e-4 {
                max_rel = max_rel.max((marg - rho.values()[i]).abs() / rho.values()[i]);
            }
        }
        assert!(max_rel < 1e-4, "max relative marginal error {max_rel}");
    }

    #[test]
    fn plan_point_mass_concentrates() {
        let grid = TensorGrid::unit(1, 17).unwrap();
        let rho = point_mass(grid, 8);
        let cfg = SinkhornConfig::new(1e-2).with_tol(1e-10).with_max_iter(10);
        let res = sinkhorn_solve(&rho, &rho, &cfg).unwrap();
        let x0 = [grid.coordinate(0, 8)];
        let at_mass = eval_plan_density(&res, &rho, &rho, &x0, &x0);
        let off = eval_plan_density(&res, &rho, &rho, &[0.0], &[1.0]);
        assert!(at_mass > 0.0);
        assert!(off == 0.0);
    }

    #[test]
    fn annealing_not_worse_than_cold_start() {
        let grid = TensorGrid::unit(1, 129).unwrap();
        let rho = gaussian_1d(grid, 0.35, 5e-3);
        let sigma = gaussian_1d(grid, 0.65, 5e-3);
        let eps = 1e-3;
        let stages = SinkhornConfig::new(eps).with_annealing(true).schedule().len();
        let total_budget = 40;
        let final_budget = total_budget - (stages - 1);
        // annealed run: impossible tolerance, fixed budget; read the residual
        let annealed_res = {
            let cfg = SinkhornConfig::new(eps)
                .with_annealing(true)
                .with_tol(1e-30)
                .with_max_iter(final_budget);
            match sinkhorn_solve(&rho, &sigma, &cfg) {
                Err(Error::SinkhornMaxIter { residual, .. }) => residual,
                Ok(r) => r.marginal_residual,
                other => panic!("{other:?}"),
            }
        };
        let cold_res = {
            let cfg = SinkhornConfig::new(eps)
                .with_tol(1e-30)
                .with_max_iter(total_budget);
            match sinkhorn_solve(&rho, &sigma, &cfg) {
                Err(Error::SinkhornMaxIter { residual, .. }) => residual,
                Ok(r) => r.marginal_residual,
                other => panic!("{other:?}"),
            }
        };
        assert!(
            annealed_res <= cold_res * 1.05,
            "annealed {annealed_res} vs cold {cold_res}"
        );
    }

    #[test]
    fn barycenter_single_input_identity() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.45, 6e-3);
        let mut cfg = BarycenterConfig::new(5e-3, true);
        cfg.tol = 1e-9;
        cfg.max_iter = 10_000;
        let (bary, _) = entropic_barycenter_cfg(std::slice::from_ref(&rho), &[1.0], &cfg).unwrap();
        let l1: f64 = discrete_masses(&bary)
            .iter()
            .zip(discrete_masses(&rho))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 1e-6, "L1 mass deviation {l1}");
    }

    #[test]
    fn barycenter_two_identical_inputs() {
        let grid = TensorGrid::unit(1, 65).unwrap();
        let rho = gaussian_1d(grid, 0.5, 6e-3);
        let bary =
            entropic_barycenter(&[rho.clone(), rho.clone()], &[0.5, 0.5], 5e-3, true).unwrap();
        for (a, b) in bary.values().iter().zip(rho.values()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    fn density_moments(d: &GridDensity) -> (f64, f64) {
        let g = d.grid();
        let m = discrete_masses(d);
        let mean: f64 = (0..g.node_count())
            .map(|i| m[i] * g.coordinate(0, i))
            .sum();
        let var: f64 = (0..g.node_count())
            .map(|i| m[i] * (g.coordinate(0, i) - mean).powi(2))
            .sum();
        (mean, var)
    }

    #[test]
    fn barycenter_debiased_gaussians() {
        let grid = TensorGrid::unit(1, 129).unwrap();
        let var = 5e-3;
        let eps = 1e-3;
        let rho = gaussian_1d(grid, 0.3, var);
        let sigma = gaussian_1d(grid, 0.7, var);
        let bary = entropic_barycenter(&[rho, sigma], &[0.5, 0.5], eps, true).unwrap();
        let (mean, v) = density_moments(&bary);
        let h = grid.spacing(0);
        assert!((mean - 0.5).abs() <= 2.0 * h, "mean {mean}");
        assert!((v - var).abs() <= 0.1 * var, "var {v} vs {var}");
    }

    #[test]
    fn barycenter_biased_loses_epsilon_variance() {
        let grid = TensorGrid::unit(1, 129).unwrap();
        let var = 5e-3;
        let eps = 1e-3;
        let rho = gaussian_1d(grid, 0.3, var);
        let sigma = gaussian_1d(grid, 0.7, var);
        let cfg = BarycenterConfig::new(eps, false);
        let (bary, _) = entropic_barycenter_cfg(&[rho, sigma], &[0.5, 0.5], &cfg).unwrap();
        let (mean, v) = density_moments(&bary);
        let h = grid.spacing(0);
        let target = var - eps;
        assert!((mean - 0.5).abs() <= 2.0 * h, "mean {mean}");
        assert!(
            (v - target).abs() <= 0.2 * target,
            "var {v} vs biased target {target}"
        );
    }

    #[test]
    fn barycenter_rejects_bad_weights() {
        let grid = TensorGrid::unit(1, 17).unwrap();
        let rho = gaussian_1d(grid, 0.5, 1e-2);
        assert!(entropic_barycenter(&[rho.clone()], &[0.5], 1e-2, true).is_err());
        assert!(entropic_barycenter(&[rho], &[-1.0, 2.0], 1e-2, true).is_err());
    }

    #[test]
    fn kernel_apply_subquadratic_scaling() {
        // doubling per-axis nodes in 2D should cost ≈ ×8 (N^1.5), not ×16
        let time_apply = |n: usize| {
            let grid = TensorGrid::unit(2, n).unwrap();
            let a = GridField::from_fn(grid, |p| 1.0 + p[0] + p[1]);
            let reps = 3;
            let mut best = f64::INFINITY;
            for _ in 0..5 {
                let t0 = std::time::Instant::now();
                for _ in 0..reps {
                    let out = kernel_apply(&a, 1e-2, false).unwrap();
                    std::hint::black_box(out);
                }
                best = best.min(t0.elapsed().as_secs_f64() / reps as f64);
            }
            best
        };
        // warm-up to stabilize the timer
        let _ = time_apply(32);
        let t64 = time_apply(64);
        let t128 = time_apply(128);
        let ratio = t128 / t64;
        assert!(
            ratio < 12.0,
            "scaling ratio {ratio} suggests quadratic kernel cost"
        );
    }
}

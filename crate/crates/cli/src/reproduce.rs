//! `otrb reproduce`: scripted experiment reproduction — the analytic 1D
//! bound checks with transport-map sweep data, the elliptic tolerance-sweep
//! table, and the advection error-versus-time series.

use std::path::Path;

use clap::Args;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use otrb_core::fem::{AdvectionProblem, FemSpace, PoissonProblem};
use otrb_core::grid::normalize_density_floored;
use otrb_core::io::{write_csv, write_dat, write_json};
use otrb_core::ot::{entropic_monge_map, sinkhorn_solve, MapDirection, SinkhornConfig};
use otrb_core::ot1d::{boundary_layer_density, transport_map_1d, BoundaryLayerFamily};
use otrb_core::rom::{
    offline_train, online_advance_advection, online_solve_poisson, peak_position,
    plain_advance_advection, plain_solve_poisson, relative_errors, remap_to_physical, Forms,
    ProblemSpec, RomOptions,
};
use otrb_core::{GridField, TensorGrid};

use crate::{config_comment, CmdResult, OutputArgs};

// ---------------------------------------------------------------------------
// reproduce 1d
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct OneDArgs {
    #[serde(flatten)]
    #[command(flatten)]
    pub out: OutputArgs,
    /// Smallest boundary-layer parameter of the family.
    #[arg(long, default_value_t = 20.0)]
    pub mu_min: f64,
    /// Squared spread parameter; the family covers `[mu_min, mu_min/spread²]`.
    #[arg(long, default_value_t = 1e-1)]
    pub spread_sq: f64,
    /// Number of log-spaced parameter samples.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    /// Quadrature nodes for the L² errors.
    #[arg(long, default_value_t = 2049)]
    pub grid: usize,
    /// Nodes for the entropic transport-map sweeps.
    #[arg(long, default_value_t = 513)]
    pub sweep_grid: usize,
    /// Check only the one-mode bound (both are checked by default).
    #[arg(long, default_value_t = false)]
    pub one_mode: bool,
}

#[derive(Serialize)]
struct OneDReport {
    config: OneDArgs,
    mu_bar: f64,
    exact_bound: f64,
    exact_max_error: f64,
    exact_bound_ok: bool,
    one_mode_bound: f64,
    one_mode_max_error: f64,
    one_mode_bound_ok: bool,
}

pub fn run_1d(args: OneDArgs) -> CmdResult {
    let dir = args.out.prepare()?.to_path_buf();
    let comment = config_comment(&args);
    let family = BoundaryLayerFamily::new(args.mu_min, args.spread_sq.sqrt())?;
    let mus = family.sample_mus(args.samples);

    // Registered errors against both closed-form mappings.
    let exact: Vec<(f64, f64)> = mus
        .iter()
        .map(|&mu| (mu, family.exact_transport_error(mu, args.grid)))
        .collect();
    let one_mode: Vec<(f64, f64)> = mus
        .iter()
        .map(|&mu| (mu, family.one_mode_error(mu, args.grid)))
        .collect();
    write_dat(&dir.join("error_exact_map.dat"), &comment, &exact)?;
    write_dat(&dir.join("error_one_mode.dat"), &comment, &one_mode)?;

    // Transport-map sweeps over the positivity floor and the entropic
    // regularization, against the cdf construction as reference.
    sweep_maps(&dir, &comment, &family, args.sweep_grid)?;

    let exact_bound = 2.0 * (-args.mu_min).exp();
    let exact_max = exact.iter().fold(0.0f64, |m, &(_, e)| m.max(e));
    let one_mode_bound = (-args.mu_min).exp() * (4.0 + family.epsilon);
    let one_mode_max = one_mode.iter().fold(0.0f64, |m, &(_, e)| m.max(e));
    let report = OneDReport {
        mu_bar: family.mu_bar(),
        exact_bound,
        exact_max_error: exact_max,
        exact_bound_ok: exact_max <= exact_bound,
        one_mode_bound,
        one_mode_max_error: one_mode_max,
        one_mode_bound_ok: one_mode_max <= one_mode_bound,
        config: args.clone(),
    };
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "exact-map bound {exact_bound:.3e}: max error {exact_max:.3e} ({})",
        if report.exact_bound_ok { "ok" } else { "VIOLATED" }
    );
    println!(
        "one-mode bound {one_mode_bound:.3e}: max error {one_mode_max:.3e} ({})",
        if report.one_mode_bound_ok { "ok" } else { "VIOLATED" }
    );
    let checked_ok = if args.one_mode {
        report.one_mode_bound_ok
    } else {
        report.exact_bound_ok && report.one_mode_bound_ok
    };
    if !checked_ok {
        return Err(crate::CmdError::Run("analytic bound violated".into()));
    }
    Ok(())
}

/// Entropic maps between the reference and the far end of the family for a
/// few floors and regularization strengths, next to the cdf oracle.
fn sweep_maps(
    dir: &Path,
    comment: &str,
    family: &BoundaryLayerFamily,
    nodes: usize,
) -> CmdResult {
    let grid = TensorGrid::unit(1, nodes)?;
    let mu_bar = family.mu_bar();
    let mu_far = family.mu_max;
    let density = |mu: f64, floor: f64| {
        normalize_density_floored(
            &GridField::from_fn(grid, |p| boundary_layer_density(mu, p[0])),
            floor,
        )
    };
    for &floor in &[0.0, 1e-3, 1e-2] {
        let rho = density(mu_bar, floor)?;
        let sigma = density(mu_far, floor)?;
        let oracle = transport_map_1d(&rho, &sigma)?;
        let pairs: Vec<(f64, f64)> = (0..nodes)
            .map(|i| (grid.position(i)[0], oracle.component(0).values()[i]))
            .collect();
        write_dat(
            &dir.join(format!("map_cdf_floor{floor:e}.dat")),
            comment,
            &pairs,
        )?;
        for &eps in &[1e-2, 1e-3, 1e-4] {
            let cfg = SinkhornConfig::new(eps).with_annealing(true).with_tol(1e-6);
            let res = sinkhorn_solve(&rho, &sigma, &cfg)?;
            let map = entropic_monge_map(&res, MapDirection::RhoToSigma, None)?;
            let pairs: Vec<(f64, f64)> = (0..nodes)
                .map(|i| (grid.position(i)[0], map.component(0).values()[i]))
                .collect();
            write_dat(
                &dir.join(format!("map_entropic_floor{floor:e}_eps{eps:e}.dat")),
                comment,
                &pairs,
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reproduce poisson
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct PoissonArgs {
    #[serde(flatten)]
    #[command(flatten)]
    pub out: OutputArgs,
    /// Energy tolerances to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5])]
    pub tau: Vec<f64>,
    /// Entropic regularization.
    #[arg(long, default_value_t = 1e-2)]
    pub eps: f64,
    /// Nodes per axis of the solver grid.
    #[arg(long, default_value_t = 33)]
    pub grid: usize,
    /// Number of training snapshots.
    #[arg(long, default_value_t = 100)]
    pub n_s: usize,
    /// Number of test parameters.
    #[arg(long, default_value_t = 50)]
    pub n_t: usize,
    /// Transport-grid refinement.
    #[arg(long, default_value_t = 3)]
    pub ot_refine: usize,
    /// Seed for training draws; test draws use `seed + 1`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_poisson(args: PoissonArgs) -> CmdResult {
    let dir = args.out.prepare()?.to_path_buf();
    let comment = config_comment(&args);
    let mut rows = Vec::new();
    let mut last_art = None;
    for &tau in &args.tau {
        let mut options = RomOptions::poisson_defaults();
        options.epsilon = args.eps;
        options.tau = tau;
        options.tau_eim = tau / 10.0;
        options.ot_refine = args.ot_refine;
        options.seed = args.seed;
        let spec = ProblemSpec::Poisson {
            problem: PoissonProblem::default(),
            grid_nodes: args.grid,
            n_s: args.n_s,
        };
        let art = offline_train(&spec, &options)?;
        let ProblemSpec::Poisson { problem, .. } = &art.problem else {
            unreachable!()
        };
        let Forms::Poisson { stiffness, rhs } = &art.forms else {
            unreachable!()
        };
        let q = stiffness.basis.size() + rhs.basis.size();
        let space = FemSpace::with_dirichlet_boundary(art.grid)?;
        let test_mus = problem.sample_parameters(args.n_t, args.seed.wrapping_add(1));
        let mut sum_l2 = 0.0;
        let mut max_l2 = 0.0f64;
        let mut sum_energy = 0.0;
        let mut sum_plain = 0.0;
        for &mu in &test_mus {
            let sol = online_solve_poisson(&art, mu, true)?;
            let physical = remap_to_physical(&sol, &art)?;
            let hf = problem.solve(&space, mu)?;
            let e = relative_errors(&physical, &hf)?;
            sum_l2 += e.rel_l2;
            max_l2 = max_l2.max(e.rel_l2);
            sum_energy += e.rel_energy;
            let plain = plain_solve_poisson(&art, mu)?;
            sum_plain += relative_errors(&plain, &hf)?.rel_l2;
        }
        let count = test_mus.len().max(1) as f64;
        rows.push(vec![
            tau,
            art.basis_size() as f64,
            art.mode_count() as f64,
            q as f64,
            sum_l2 / count,
            max_l2,
            sum_energy / count,
            sum_plain / count,
        ]);
        println!(
            "tau {tau:.1e}: n = {}, m = {}, Q = {q}, avg rel L2 = {:.3e}, plain = {:.3e}",
            art.basis_size(),
            art.mode_count(),
            sum_l2 / count,
            sum_plain / count
        );
        last_art = Some(art);
    }
    write_csv(
        &dir.join("tolerance_table.csv"),
        &comment,
        &[
            "tau",
            "n",
            "m",
            "q",
            "avg_rel_l2",
            "max_rel_l2",
            "avg_rel_energy",
            "plain_avg_rel_l2",
        ],
        &rows,
    )?;
    if let Some(art) = &last_art {
        crate::train::export_spectra(&dir, art, &comment)?;
    }
    write_json(&dir.join("config.json"), &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// reproduce advection
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct AdvectionArgs {
    #[serde(flatten)]
    #[command(flatten)]
    pub out: OutputArgs,
    /// Nodes per axis of the solver grid.
    #[arg(long, default_value_t = 33)]
    pub grid: usize,
    /// Number of training angles.
    #[arg(long, default_value_t = 10)]
    pub n_alpha: usize,
    /// Training horizon.
    #[arg(long, default_value_t = 0.8)]
    pub t_train: f64,
    /// Evaluation horizon (past the training range).
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Number of random test angles.
    #[arg(long, default_value_t = 20)]
    pub n_t: usize,
    /// Transport-grid refinement.
    #[arg(long, default_value_t = 3)]
    pub ot_refine: usize,
    /// Seed for the test-angle draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct AdvectionSummary {
    config: AdvectionArgs,
    avg_final_rel_l2: f64,
    plain_avg_final_rel_l2: f64,
    max_peak_distance_cells: f64,
}

pub fn run_advection(args: AdvectionArgs) -> CmdResult {
    let dir = args.out.prepare()?.to_path_buf();
    let comment = config_comment(&args);
    let mut options = RomOptions::advection_defaults();
    options.ot_refine = args.ot_refine;
    options.seed = args.seed;
    let spec = ProblemSpec::Advection {
        base: AdvectionProblem::new(0.0),
        grid_nodes: args.grid,
        n_alpha: args.n_alpha,
        t_train: args.t_train,
    };
    let art = offline_train(&spec, &options)?;
    let ProblemSpec::Advection { base, .. } = &art.problem else {
        unreachable!()
    };
    let dt = base.dt;
    let steps = (args.horizon / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let alphas: Vec<f64> = (0..args.n_t)
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();

    let space = FemSpace::with_dirichlet_boundary(art.grid)?;
    let h = art.grid.spacing(0);
    let mut sum_err = vec![0.0f64; steps + 1];
    let mut sum_plain = vec![0.0f64; steps + 1];
    let mut sum_final = 0.0;
    let mut sum_final_plain = 0.0;
    let mut max_peak_cells = 0.0f64;
    for &alpha in &alphas {
        let states = online_advance_advection(&art, alpha, args.horizon, true)?;
        let plain = plain_advance_advection(&art, alpha, args.horizon)?;
        let mut problem = base.clone();
        problem.alpha = alpha;
        let stepper = otrb_core::fem::AdvectionStepper::new(&space, problem);
        let hf = stepper.trajectory(args.horizon)?;
        for (k, state) in states.iter().enumerate() {
            let physical = remap_to_physical(state, &art)?;
            let e = relative_errors(&physical, &hf[k])?;
            sum_err[k] += e.rel_l2;
            sum_plain[k] += relative_errors(&plain[k], &hf[k])?.rel_l2;
            if k == steps {
                sum_final += e.rel_l2;
                sum_final_plain += relative_errors(&plain[k], &hf[k])?.rel_l2;
                let p_rom = peak_position(&physical);
                let p_hf = peak_position(&hf[k]);
                let d = ((p_rom[0] - p_hf[0]).powi(2) + (p_rom[1] - p_hf[1]).powi(2)).sqrt();
                max_peak_cells = max_peak_cells.max(d / h);
            }
        }
    }
    let n = args.n_t.max(1) as f64;
    let marker = format!("{comment}\nt_train = {}", args.t_train);
    let series: Vec<(f64, f64)> = sum_err
        .iter()
        .enumerate()
        .map(|(k, &s)| (k as f64 * dt, s / n))
        .collect();
    write_dat(&dir.join("error_vs_time.dat"), &marker, &series)?;
    let plain_series: Vec<(f64, f64)> = sum_plain
        .iter()
        .enumerate()
        .map(|(k, &s)| (k as f64 * dt, s / n))
        .collect();
    write_dat(&dir.join("plain_error_vs_time.dat"), &marker, &plain_series)?;
    let summary = AdvectionSummary {
        avg_final_rel_l2: sum_final / n,
        plain_avg_final_rel_l2: sum_final_plain / n,
        max_peak_distance_cells: max_peak_cells,
        config: args.clone(),
    };
    println!(
        "final-time avg rel L2 {:.3e} (plain {:.3e}), worst peak offset {:.2} cells",
        summary.avg_final_rel_l2, summary.plain_avg_final_rel_l2, summary.max_peak_distance_cells
    );
    write_json(&dir.join("report.json"), &summary)?;
    Ok(())
}

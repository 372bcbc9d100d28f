//! `otrb solve`: online solves at seeded test parameters from stored
//! artifacts, with per-parameter CSV rows and an aggregate JSON report.

use std::path::{Path, PathBuf};

use clap::Args;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use otrb_core::fem::FemSpace;
use otrb_core::io::{load_artifacts, write_csv, write_field_csv, write_json};
use otrb_core::rom::{
    error_report, online_advance_advection, online_solve_poisson, remap_to_physical,
    ErrorReport, OfflineArtifacts, ProblemSpec,
};
use otrb_core::GridField;

use crate::{config_comment, CmdResult, OutputArgs};

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolveArgs {
    /// Directory holding trained artifacts.
    #[arg(long)]
    pub artifacts: PathBuf,
    #[serde(flatten)]
    #[command(flatten)]
    pub out: OutputArgs,
    /// Number of test parameters (elliptic: 50, advection: 20 by default).
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Seed for the test draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the grid-free interpolation path online (default true).
    #[arg(long, default_value_t = true)]
    pub eim: bool,
    /// Run both online paths and write a paired coefficient comparison.
    #[arg(long, default_value_t = false)]
    pub compare: bool,
    /// Time horizon for advection marches.
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Also dump the reconstructed physical-domain fields.
    #[arg(long, default_value_t = false)]
    pub dump_fields: bool,
}

#[derive(Serialize)]
struct SolveSummary {
    config: SolveArgs,
    report: ErrorReport,
}

pub fn run(args: SolveArgs) -> CmdResult {
    let art = load_artifacts(&args.artifacts)?;
    let dir = args.out.prepare()?.to_path_buf();
    match &art.problem {
        ProblemSpec::Poisson { .. } => run_poisson(&args, &art, &dir),
        ProblemSpec::Advection { .. } => run_advection(&args, &art, &dir),
    }
}

fn run_poisson(args: &SolveArgs, art: &OfflineArtifacts, dir: &Path) -> CmdResult {
    let ProblemSpec::Poisson { problem, .. } = &art.problem else {
        unreachable!()
    };
    let n_t = args.n_t.unwrap_or(50);
    let comment = config_comment(args);
    let mus = problem.sample_parameters(n_t, args.seed);
    let space = FemSpace::with_dirichlet_boundary(art.grid)?;

    let mut params = Vec::with_capacity(n_t);
    let mut fields = Vec::with_capacity(n_t);
    let mut truths = Vec::with_capacity(n_t);
    let mut compare_rows = Vec::new();
    for (k, &mu) in mus.iter().enumerate() {
        let sol = online_solve_poisson(art, mu, args.eim)?;
        if args.compare {
            let other = online_solve_poisson(art, mu, !args.eim)?;
            for (i, (a, b)) in sol
                .coefficients
                .iter()
                .zip(&other.coefficients)
                .enumerate()
            {
                compare_rows.push(vec![mu[0], mu[1], i as f64, *a, *b, a - b]);
            }
        }
        let physical = remap_to_physical(&sol, art)?;
        let hf = problem.solve(&space, mu)?;
        if args.dump_fields {
            write_field_csv(&dir.join(format!("field_{k:03}.csv")), &comment, &physical)?;
        }
        params.push(vec![mu[0], mu[1]]);
        fields.push(physical);
        truths.push(hf);
    }
    let report = error_report(&params, &fields, &truths)?;
    write_errors_csv(
        &dir.join("errors.csv"),
        &comment,
        &["mu0", "mu1"],
        &report,
    )?;
    if args.compare {
        write_csv(
            &dir.join("eim_comparison.csv"),
            &comment,
            &["mu0", "mu1", "index", "coeff_a", "coeff_b", "gap"],
            &compare_rows,
        )?;
    }
    write_json(
        &dir.join("report.json"),
        &SolveSummary {
            config: args.clone(),
            report,
        },
    )?;
    Ok(())
}

fn run_advection(args: &SolveArgs, art: &OfflineArtifacts, dir: &Path) -> CmdResult {
    let n_t = args.n_t.unwrap_or(20);
    let comment = config_comment(args);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let alphas: Vec<f64> = (0..n_t)
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();

    let mut params = Vec::with_capacity(n_t);
    let mut fields = Vec::with_capacity(n_t);
    let mut truths = Vec::with_capacity(n_t);
    for (k, &alpha) in alphas.iter().enumerate() {
        let states = online_advance_advection(art, alpha, args.horizon, args.eim)?;
        let last = states.last().expect("march returns at least the start");
        let physical = remap_to_physical(last, art)?;
        let hf = hf_final_state(art, alpha, args.horizon)?;
        if args.dump_fields {
            write_field_csv(&dir.join(format!("field_{k:03}.csv")), &comment, &physical)?;
        }
        params.push(vec![alpha, args.horizon]);
        fields.push(physical);
        truths.push(hf);
    }
    let report = error_report(&params, &fields, &truths)?;
    write_errors_csv(
        &dir.join("errors.csv"),
        &comment,
        &["alpha", "t"],
        &report,
    )?;
    write_json(
        &dir.join("report.json"),
        &SolveSummary {
            config: args.clone(),
            report,
        },
    )?;
    Ok(())
}

/// High-fidelity final state of the advection problem at one angle.
pub fn hf_final_state(
    art: &OfflineArtifacts,
    alpha: f64,
    horizon: f64,
) -> Result<GridField, otrb_core::Error> {
    let ProblemSpec::Advection { base, .. } = &art.problem else {
        return Err(otrb_core::Error::InvalidArgument(
            "artifacts were not trained for the advection problem".into(),
        ));
    };
    let space = FemSpace::with_dirichlet_boundary(art.grid)?;
    let mut problem = base.clone();
    problem.alpha = alpha;
    let stepper = otrb_core::fem::AdvectionStepper::new(&space, problem);
    let traj = stepper.trajectory(horizon)?;
    Ok(traj.into_iter().last().expect("nonempty trajectory"))
}

/// One CSV row per test parameter with all three relative error metrics.
pub fn write_errors_csv(
    path: &Path,
    comment: &str,
    param_names: &[&str],
    report: &ErrorReport,
) -> CmdResult {
    let mut columns: Vec<&str> = param_names.to_vec();
    columns.extend_from_slice(&["rel_l2", "rel_h1", "rel_energy"]);
    let rows: Vec<Vec<f64>> = report
        .entries
        .iter()
        .map(|e| {
            let mut row = e.parameter.clone();
            row.extend_from_slice(&[e.rel_l2, e.rel_h1, e.rel_energy]);
            row
        })
        .collect();
    write_csv(path, comment, &columns, &rows)?;
    Ok(())
}

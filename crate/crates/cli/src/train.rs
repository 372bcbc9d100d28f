//! `otrb train`: run the offline phase, persist the artifacts, and export
//! the recorded eigenvalue spectra.

use std::path::Path;

use clap::Args;
use serde::Serialize;

use otrb_core::fem::{AdvectionProblem, PoissonProblem};
use otrb_core::io::{save_artifacts, write_csv, write_dat, write_json};
use otrb_core::rom::{offline_train, DensityStrategy, OfflineArtifacts, ProblemSpec, RomOptions};

use crate::{config_comment, usage, CmdResult, OutputArgs, ProblemKind};

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Model family to train.
    #[arg(long, value_enum)]
    pub problem: ProblemKind,
    #[serde(flatten)]
    #[command(flatten)]
    pub out: OutputArgs,
    /// Entropic regularization of the transport solves.
    #[arg(long, default_value_t = 1e-2)]
    pub eps: f64,
    /// Energy tolerance for transport modes and the reference basis.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Energy tolerance for the hyper-reduction bases (default: tau / 10).
    #[arg(long)]
    pub tau_eim: Option<f64>,
    /// Positivity floor applied when normalizing densities.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Debias the barycenter and transport maps (default depends on the
    /// density rule: on for strictly positive densities, off otherwise).
    #[arg(long)]
    pub debias: Option<bool>,
    /// Number of elliptic training snapshots.
    #[arg(long, default_value_t = 100)]
    pub n_s: usize,
    /// Nodes per axis of the solver grid.
    #[arg(long, default_value_t = 33)]
    pub grid: usize,
    /// Transport-grid refinement (cells per solver cell).
    #[arg(long, default_value_t = 3)]
    pub ot_refine: usize,
    /// Seed for all random draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Force the number of transport modes instead of using tau.
    #[arg(long)]
    pub mode_rank: Option<usize>,
    /// Force the reference-basis size instead of using tau.
    #[arg(long)]
    pub basis_rank: Option<usize>,
    /// Size of the unregistered comparison basis.
    #[arg(long)]
    pub plain_rank: Option<usize>,
    /// Number of training angles (advection).
    #[arg(long, default_value_t = 10)]
    pub n_alpha: usize,
    /// Training time horizon (advection).
    #[arg(long, default_value_t = 0.8)]
    pub t_train: f64,
}

/// Build the problem/options pair for a trainable family.
pub fn resolve(args: &TrainArgs) -> Result<(ProblemSpec, RomOptions), crate::CmdError> {
    let (mut options, spec) = match args.problem {
        ProblemKind::PoissonU2 | ProblemKind::PoissonF => {
            let mut o = RomOptions::poisson_defaults();
            if args.problem == ProblemKind::PoissonF {
                // The source is not strictly positive on the grid scale;
                // debiasing is known to degrade this density rule.
                o.density = DensityStrategy::Source;
                o.debias = false;
            }
            let spec = ProblemSpec::Poisson {
                problem: PoissonProblem::default(),
                grid_nodes: args.grid,
                n_s: args.n_s,
            };
            (o, spec)
        }
        ProblemKind::Advection => {
            let o = RomOptions::advection_defaults();
            let spec = ProblemSpec::Advection {
                base: AdvectionProblem::new(0.0),
                grid_nodes: args.grid,
                n_alpha: args.n_alpha,
                t_train: args.t_train,
            };
            (o, spec)
        }
        ProblemKind::BoundaryLayer1d | ProblemKind::AdvectionAnalytic => {
            return Err(usage(
                "analytic families have no offline phase; use `otrb reproduce`",
            ));
        }
    };
    options.epsilon = args.eps;
    if let Some(tau) = args.tau {
        options.tau = tau;
    }
    options.tau_eim = args.tau_eim.unwrap_or(options.tau / 10.0);
    if let Some(f) = args.floor {
        options.floor = f;
    }
    if let Some(d) = args.debias {
        options.debias = d;
    }
    options.ot_refine = args.ot_refine;
    options.seed = args.seed;
    if args.mode_rank.is_some() {
        options.mode_rank = args.mode_rank;
    }
    if args.basis_rank.is_some() {
        options.basis_rank = args.basis_rank;
    }
    if args.plain_rank.is_some() {
        options.plain_rank = args.plain_rank;
    }
    Ok((spec, options))
}

/// Export the recorded spectra as indexed CSVs plus two-column .dat series.
pub fn export_spectra(dir: &Path, art: &OfflineArtifacts, comment: &str) -> CmdResult {
    let named: Vec<(String, &[f64])> = [
        ("snapshot".to_string(), art.spectra.snapshot.as_slice()),
        ("embedding".to_string(), art.spectra.embedding.as_slice()),
        ("mapped".to_string(), art.spectra.mapped.as_slice()),
    ]
    .into_iter()
    .chain(
        art.spectra
            .forms
            .iter()
            .map(|(n, v)| (format!("form_{n}"), v.as_slice())),
    )
    .collect();
    for (name, values) in named {
        let rows: Vec<Vec<f64>> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i + 1) as f64, v])
            .collect();
        write_csv(
            &dir.join(format!("spectrum_{name}.csv")),
            comment,
            &["index", "eigenvalue"],
            &rows,
        )?;
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        write_dat(&dir.join(format!("spectrum_{name}.dat")), comment, &pairs)?;
    }
    Ok(())
}

/// Print the stage timing table, split into the transport and reduction
/// phases of the offline computation.
pub fn print_timings(timings: &[(String, f64)]) {
    const TRANSPORT: [&str; 4] = ["densities", "reference", "potentials", "modes"];
    println!("{:<24} {:>10}", "stage", "seconds");
    let mut transport = 0.0;
    let mut reduction = 0.0;
    for (name, secs) in timings {
        println!("{name:<24} {secs:>10.3}");
        if TRANSPORT.contains(&name.as_str()) {
            transport += secs;
        } else {
            reduction += secs;
        }
    }
    println!("{:<24} {transport:>10.3}", "offline I (transport)");
    println!("{:<24} {reduction:>10.3}", "offline II (reduction)");
}

pub fn run(args: TrainArgs) -> CmdResult {
    let (spec, options) = resolve(&args)?;
    let dir = args.out.prepare()?.to_path_buf();
    let art = offline_train(&spec, &options)?;
    save_artifacts(&dir, &art)?;
    write_json(&dir.join("config.json"), &args)?;
    let comment = config_comment(&args);
    export_spectra(&dir, &art, &comment)?;
    print_timings(&art.timings);
    println!(
        "trained: {} transport modes, {} reference basis functions -> {}",
        art.mode_count(),
        art.basis_size(),
        dir.display()
    );
    Ok(())
}

//! Shared fixtures for the benchmark targets.

use otrb_core::fem::PoissonProblem;
use otrb_core::rom::{offline_train, OfflineArtifacts, ProblemSpec, RomOptions};

/// Train a small elliptic model with fixed reduced dimensions so that only
/// the grid resolution varies between benchmark points.
pub fn trained_poisson(grid_nodes: usize) -> OfflineArtifacts {
    let spec = ProblemSpec::Poisson {
        problem: PoissonProblem::default(),
        grid_nodes,
        n_s: 8,
    };
    let mut options = RomOptions::poisson_defaults();
    options.ot_refine = 1;
    options.tau = 1e-3;
    options.tau_eim = 1e-4;
    options.mode_rank = Some(2);
    options.basis_rank = Some(4);
    offline_train(&spec, &options).expect("offline training succeeds")
}

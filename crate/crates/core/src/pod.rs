//! Proper orthogonal decomposition from snapshot correlation matrices, with
//! the retained-energy truncation rule used throughout the pipeline.
//!
//! A correlation matrix holds pairwise inner products of snapshots in some
//! ambient inner product (nodal L², ρ̄-weighted gradient, Frobenius, ...).
//! The eigendecomposition then yields mode *coefficients* — the weights that
//! combine snapshots into orthonormal modes — so this module never needs to
//! see the snapshots themselves.

use crate::linalg::jacobi_eigh;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Symmetric matrix of pairwise snapshot inner products.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "correlation matrix needs {}x{} entries, got {}",
                n,
                n,
                entries.len()
            )));
        }
        let scale = entries
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (entries[i * n + j] - entries[j * n + i]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// Build from an inner-product callback over snapshot indices.
    pub fn from_inner_products(n: usize, mut ip: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = ip(i, j);
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Self::new(n, entries)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Eigen-structure of a correlation matrix plus the truncation decision.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// All eigenvalues, nonincreasing, clamped at zero.
    eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, flat row-major (row = snapshot index).
    eigenvectors: Vec<f64>,
    n: usize,
    retained: usize,
}

impl PodBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn snapshot_count(&self) -> usize {
        self.n
    }

    /// Weights combining snapshots into mode `j`:
    /// `ζ_j = λ_j^{-1/2} Σ_i (v_j)_i · snapshot_i`.
    pub fn mode_weights(&self, j: usize) -> Vec<f64> {
        let s = 1.0 / self.eigenvalues[j].sqrt();
        (0..self.n)
            .map(|i| s * self.eigenvectors[i * self.n + j])
            .collect()
    }

    /// Expansion coefficient of snapshot `i` on mode `j`:
    /// `w_j(μ_i) = √λ_j (v_j)_i`, exact at snapshots up to truncation.
    pub fn snapshot_coefficient(&self, j: usize, i: usize) -> f64 {
        self.eigenvalues[j].sqrt() * self.eigenvectors[i * self.n + j]
    }

    /// Total eigenvalue energy `Σ λ_i`.
    pub fn total_energy(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Energy left out by the first `m` modes, `Σ_{i>m} λ_i`.
    pub fn tail_energy(&self, m: usize) -> f64 {
        self.eigenvalues.iter().skip(m).sum()
    }
}

/// Eigendecomposition of a correlation matrix: nonincreasing eigenvalues
/// and orthonormal eigenvectors (columns of the flat matrix), via cyclic
/// Jacobi rotations.
pub fn symmetric_eigendecomposition(c: &CorrelationMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    jacobi_eigh(c.n, &c.entries, RANK_TOL)
}

/// POD with the retained-energy rule: keep the smallest `m` with
/// `1 − E(m; λ) < τ`, where `E(m) = Σ_{i≤m} λ_i / Σ_j λ_j`. Eigenvalues
/// below `1e-12 · λ_max` are treated as zero rank and never retained.
pub fn pod_from_correlation(c: &CorrelationMatrix, tau: f64) -> Result<PodBasis> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation threshold must lie in (0, 1), got {tau}"
        )));
    }
    let (mut vals, vecs) = symmetric_eigendecomposition(c)?;
    let lambda_max = vals.first().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    if vals.iter().any(|&l| l < -PSD_TOL * lambda_max) {
        return Err(Error::InvalidArgument(format!(
            "matrix not positive semidefinite: eigenvalue {:.3e}",
            vals.last().copied().unwrap()
        )));
    }
    for l in &mut vals {
        if *l < RANK_TOL * lambda_max {
            *l = 0.0;
        }
    }
    let total: f64 = vals.iter().sum();
    let rank = vals.iter().filter(|&&l| l > 0.0).count();
    let mut retained = rank;
    let mut acc = 0.0;
    for (m, &l) in vals.iter().enumerate() {
        acc += l;
        if 1.0 - acc / total < tau {
            retained = (m + 1).min(rank);
            break;
        }
    }
    Ok(PodBasis {
        eigenvalues: vals,
        eigenvectors: vecs,
        n: c.n,
        retained,
    })
}

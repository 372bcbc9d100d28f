//! Empirical interpolation: offline greedy construction of interpolation
//! functions and points from a set of modes, and online recovery of
//! interpolation coefficients from point values alone.
//!
//! Modes are plain sample vectors.  A scalar field on a grid uses its
//! nodal values directly; a matrix-valued quantity is stacked entrywise
//! into one long vector (node-major), which makes the greedy sup-norm
//! and the induced inner products consistent with the Frobenius norm of
//! the matrix field.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Relative threshold below which a greedy residual counts as degenerate.
pub const EIM_DEGENERACY_TOL: f64 = 1e-12;

/// Interpolation system produced by the greedy construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EimBasis {
    /// Sample-vector length shared by all interpolation functions.
    len: usize,
    /// Interpolation functions, each normalized to value 1 at its own point.
    functions: Vec<Vec<f64>>,
    /// Interpolation point indices (into the sample vectors), all distinct.
    points: Vec<usize>,
    /// Lower-triangular interpolation matrix, row-major Q x Q, unit diagonal.
    b: Vec<f64>,
    /// True when the requested size was reduced due to a degenerate residual.
    truncated: bool,
}

impl EimBasis {
    /// Number of interpolation functions.
    pub fn size(&self) -> usize {
        self.functions.len()
    }

    /// Sample-vector length.
    pub fn sample_len(&self) -> usize {
        self.len
    }

    /// Interpolation point indices.
    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Interpolation functions.
    pub fn functions(&self) -> &[Vec<f64>] {
        &self.functions
    }

    /// Entry of the lower-triangular interpolation matrix.
    pub fn b_entry(&self, row: usize, col: usize) -> f64 {
        self.b[row * self.size() + col]
    }

    /// Whether the construction stopped early on a degenerate residual.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Interpolation coefficients from values at the interpolation points
    /// (forward substitution on the unit-lower-triangular system).
    pub fn coefficients(&self, point_values: &[f64]) -> Vec<f64> {
        let q = self.size();
        assert_eq!(point_values.len(), q, "expected one value per point");
        let mut theta = point_values.to_vec();
        for i in 0..q {
            for j in 0..i {
                theta[i] -= self.b[i * q + j] * theta[j];
            }
        }
        theta
    }

    /// Evaluate the interpolant `sum_q theta_q X_q` on the full sample vector.
    pub fn interpolate(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.size());
        let mut out = vec![0.0; self.len];
        for (t, f) in theta.iter().zip(&self.functions) {
            for (o, v) in out.iter_mut().zip(f) {
                *o += t * v;
            }
        }
        out
    }

    /// Interpolate a full sample vector through its point values.
    pub fn project(&self, sample: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> = self.points.iter().map(|&p| sample[p]).collect();
        self.interpolate(&self.coefficients(&vals))
    }

    /// Sup-norm Lebesgue constant of the interpolation operator:
    /// `max_y sum_j |L_j(y)|` over the cardinal functions `L_j`.
    pub fn lebesgue_constant(&self) -> f64 {
        let q = self.size();
        // Columns of B^{-1} via forward substitution on unit vectors.
        let mut binv = vec![0.0; q * q];
        for j in 0..q {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            let col = self.coefficients(&e);
            for i in 0..q {
                binv[i * q + j] = col[i];
            }
        }
        let mut lambda: f64 = 0.0;
        for y in 0..self.len {
            let mut s = 0.0;
            for j in 0..q {
                let mut card = 0.0;
                for i in 0..q {
                    card += self.functions[i][y] * binv[i * q + j];
                }
                s += card.abs();
            }
            lambda = lambda.max(s);
        }
        lambda
    }
}

/// Greedy construction: pick the worst-approximated point of each mode's
/// interpolation residual in turn.  Ties in the argmax break toward the
/// lowest index; a residual below [`EIM_DEGENERACY_TOL`] times the data
/// scale stops the construction early with a reduced size.
pub fn eim_construct(modes: &[Vec<f64>], q_target: usize) -> Result<EimBasis> {
    if modes.is_empty() || q_target == 0 {
        return Err(Error::InvalidArgument(
            "eim_construct requires at least one mode".into(),
        ));
    }
    let q_target = q_target.min(modes.len());
    let len = modes[0].len();
    if len == 0 {
        return Err(Error::InvalidArgument("eim_construct: empty sample vectors".into()));
    }
    for m in modes {
        if m.len() != len {
            return Err(Error::InvalidArgument(
                "eim_construct: inconsistent sample-vector lengths".into(),
            ));
        }
        if let Some(i) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
    }
    let scale = modes
        .iter()
        .take(q_target)
        .flat_map(|m| m.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut functions: Vec<Vec<f64>> = Vec::with_capacity(q_target);
    let mut points: Vec<usize> = Vec::with_capacity(q_target);
    let mut truncated = false;

    for mode in modes.iter().take(q_target) {
        // Residual of interpolating this mode with the current basis.
        let mut r = mode.clone();
        if !functions.is_empty() {
            let q = functions.len();
            let vals: Vec<f64> = points.iter().map(|&p| mode[p]).collect();
            // Forward substitution with the basis built so far.
            let mut theta = vals;
            for i in 0..q {
                for j in 0..i {
                    theta[i] -= functions[j][points[i]] * theta[j];
                }
            }
            for (t, f) in theta.iter().zip(&functions) {
                for (rv, fv) in r.iter_mut().zip(f) {
                    *rv -= t * fv;
                }
            }
        }
        let (mut best, mut best_val) = (0usize, 0.0f64);
        for (i, v) in r.iter().enumerate() {
            if v.abs() > best_val {
                best = i;
                best_val = v.abs();
            }
        }
        if best_val < EIM_DEGENERACY_TOL * scale {
            truncated = true;
            break;
        }
        let pivot = r[best];
        for v in r.iter_mut() {
            *v /= pivot;
        }
        functions.push(r);
        points.push(best);
    }

    if functions.is_empty() {
        return Err(Error::InvalidArgument(
            "eim_construct: all modes degenerate at the first step".into(),
        ));
    }
    if truncated {
        eprintln!(
            "warning: interpolation basis reduced to {} of {} requested functions (degenerate residual)",
            functions.len(),
            q_target
        );
    }

    let q = functions.len();
    let mut b = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            b[i * q + j] = functions[j][points[i]];
        }
    }

    Ok(EimBasis {
        len,
        functions,
        points,
        b,
        truncated,
    })
}

/// Precompute one assembled operator per interpolation function.  The
/// closure receives an interpolation function as a coefficient sample
/// vector and returns the corresponding assembled matrix (flattened);
/// the online phase contracts the stack with [`contract_tensor`].
pub fn eim_reduced_tensor<F>(basis: &EimBasis, assemble: F) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    basis.functions().iter().map(|f| assemble(f)).collect()
}

/// Online contraction `sum_q theta_q A_q` of a precomputed tensor stack.
pub fn contract_tensor(tensor: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    assert_eq!(tensor.len(), theta.len());
    let len = tensor.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (t, a) in theta.iter().zip(tensor) {
        for (o, v) in out.iter_mut().zip(a) {
            *o += t * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn single_mode_normalized_at_its_max() {
        let xs = nodes(11);
        let f: Vec<f64> = xs.iter().map(|&x| 2.0 * x).collect();
        let basis = eim_construct(&[f.clone()], 1).unwrap();
        assert_eq!(basis.size(), 1);
        assert_eq!(basis.points()[0], 10); // argmax |2x| on [0,1]
        assert!((basis.functions()[0][10] - 1.0).abs() < 1e-15);
        for (v, &fv) in basis.functions()[0].iter().zip(&f) {
            assert!((v - fv / 2.0).abs() < 1e-15);
        }
        assert!((basis.b_entry(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polynomial_modes_reconstruct_quadratics_exactly() {
        let xs = nodes(41);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|_| 1.0).collect(),
            xs.iter().map(|&x| x).collect(),
            xs.iter().map(|&x| x * x).collect(),
        ];
        let basis = eim_construct(&modes, 3).unwrap();
        assert_eq!(basis.size(), 3);
        // Any quadratic must be recovered from its three point values, at
        // every node, not just the chosen points.
        let target: Vec<f64> = xs.iter().map(|&x| 0.7 - 1.3 * x + 2.4 * x * x).collect();
        let rec = basis.project(&target);
        for (r, t) in rec.iter().zip(&target) {
            assert!((r - t).abs() < 1e-10, "reconstruction error {}", (r - t).abs());
        }
    }

    #[test]
    fn identical_modes_flag_degeneracy() {
        let xs = nodes(21);
        let f: Vec<f64> = xs.iter().map(|&x| (3.0 * x).sin()).collect();
        let basis = eim_construct(&[f.clone(), f], 2).unwrap();
        assert_eq!(basis.size(), 1);
        assert!(basis.truncated());
    }

    #[test]
    fn b_matrix_is_unit_lower_triangular() {
        let xs = nodes(31);
        let modes: Vec<Vec<f64>> = (0..4)
            .map(|k| xs.iter().map(|&x| (k as f64 + 1.0) * x.powi(k as i32)).collect())
            .collect();
        let basis = eim_construct(&modes, 4).unwrap();
        let q = basis.size();
        for i in 0..q {
            assert!((basis.b_entry(i, i) - 1.0).abs() < 1e-14);
            // Upper part vanishes: later functions are residuals that are
            // zero at all earlier points.
            for j in i + 1..q {
                assert!(basis.functions()[j][basis.points()[i]].abs() < 1e-12);
            }
        }
        // Points are distinct.
        let mut pts = basis.points().to_vec();
        pts.sort_unstable();
        pts.dedup();
        assert_eq!(pts.len(), q);
    }

    #[test]
    fn coefficients_of_a_basis_function_form_a_unit_vector() {
        let xs = nodes(25);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|&x| 1.0 + x).collect(),
            xs.iter().map(|&x| x * x).collect(),
            xs.iter().map(|&x| (2.0 * x).cos()).collect(),
        ];
        let basis = eim_construct(&modes, 3).unwrap();
        let x2 = &basis.functions()[1];
        let vals: Vec<f64> = basis.points().iter().map(|&p| x2[p]).collect();
        let theta = basis.coefficients(&vals);
        assert!((theta[0]).abs() < 1e-13);
        assert!((theta[1] - 1.0).abs() < 1e-13);
        assert!((theta[2]).abs() < 1e-13);
    }

    #[test]
    fn coefficients_recover_known_combination() {
        let xs = nodes(25);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|&x| 1.0 + x).collect(),
            xs.iter().map(|&x| x * x).collect(),
            xs.iter().map(|&x| (2.0 * x).cos()).collect(),
        ];
        let basis = eim_construct(&modes, 3).unwrap();
        let c = [0.5, -1.2, 2.0];
        let combo = basis.interpolate(&c);
        let vals: Vec<f64> = basis.points().iter().map(|&p| combo[p]).collect();
        let theta = basis.coefficients(&vals);
        for (t, want) in theta.iter().zip(&c) {
            assert!((t - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_exact_at_points_for_arbitrary_data() {
        let xs = nodes(33);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|&x| (1.5 * x).exp()).collect(),
            xs.iter().map(|&x| (4.0 * x).sin()).collect(),
            xs.iter().map(|&x| x.powi(3)).collect(),
        ];
        let basis = eim_construct(&modes, 3).unwrap();
        let field: Vec<f64> = xs.iter().map(|&x| (x - 0.3).tanh()).collect();
        let rec = basis.project(&field);
        for &p in basis.points() {
            assert!((rec[p] - field[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn processed_modes_interpolated_to_machine_precision() {
        // Greedy property: every input mode that entered the basis is
        // reproduced exactly everywhere (it lies in the span).
        let xs = nodes(29);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|_| 1.0).collect(),
            xs.iter().map(|&x| x).collect(),
            xs.iter().map(|&x| (x * 6.0).sin()).collect(),
            xs.iter().map(|&x| (x * 6.0).cos()).collect(),
        ];
        let basis = eim_construct(&modes, 4).unwrap();
        let scale = 1.0;
        for mode in &modes {
            let rec = basis.project(mode);
            for (r, m) in rec.iter().zip(mode) {
                assert!((r - m).abs() <= 1e-12 * scale * 10.0);
            }
        }
    }

    #[test]
    fn reduced_tensor_contraction_matches_direct_assembly() {
        // "Assembly" here: weighted mass-type matrix m_ij = sum_y c(y) w_i(y) w_j(y)
        // with two fixed test vectors.  At full rank the contraction with
        // the coefficient field's interpolation coefficients must equal the
        // direct assembly with that field.
        let xs = nodes(21);
        let modes: Vec<Vec<f64>> = vec![
            xs.iter().map(|_| 1.0).collect(),
            xs.iter().map(|&x| x).collect(),
            xs.iter().map(|&x| x * x).collect(),
        ];
        let basis = eim_construct(&modes, 3).unwrap();
        let w0: Vec<f64> = xs.iter().map(|&x| (2.0 * x).sin()).collect();
        let w1: Vec<f64> = xs.iter().map(|&x| 1.0 - x).collect();
        let assemble = |c: &[f64]| -> Vec<f64> {
            let basis_vecs = [&w0, &w1];
            let mut m = vec![0.0; 4];
            for i in 0..2 {
                for j in 0..2 {
                    m[i * 2 + j] = c
                        .iter()
                        .zip(basis_vecs[i].iter().zip(basis_vecs[j].iter()))
                        .map(|(cv, (a, b))| cv * a * b)
                        .sum();
                }
            }
            m
        };
        let tensor = eim_reduced_tensor(&basis, assemble);
        // Coefficient field inside the span of the modes.
        let coeff: Vec<f64> = xs.iter().map(|&x| 0.3 + 0.9 * x - 0.4 * x * x).collect();
        let vals: Vec<f64> = basis.points().iter().map(|&p| coeff[p]).collect();
        let theta = basis.coefficients(&vals);
        let online = contract_tensor(&tensor, &theta);
        let direct = assemble(&coeff);
        for (o, d) in online.iter().zip(&direct) {
            assert!((o - d).abs() < 1e-10, "contraction mismatch {}", (o - d).abs());
        }
    }

    #[test]
    fn zero_test_vectors_give_zero_tensor() {
        let xs = nodes(11);
        let modes = vec![xs.clone()];
        let basis = eim_construct(&modes, 1).unwrap();
        let tensor = eim_reduced_tensor(&basis, |_c| vec![0.0; 4]);
        assert!(tensor.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_tie_breaks_to_lowest_index() {
        // Symmetric tent: equal maxima at two nodes; the earlier index wins.
        let f = vec![0.0, 1.0, 0.5, 1.0, 0.0];
        let basis = eim_construct(&[f], 1).unwrap();
        assert_eq!(basis.points()[0], 1);
    }

    #[test]
    fn lebesgue_constant_at_least_one() {
        let xs = nodes(41);
        let modes: Vec<Vec<f64>> = (0..5)
            .map(|k| xs.iter().map(|&x| x.powi(k)).collect())
            .collect();
        let basis = eim_construct(&modes, 5).unwrap();
        let lambda = basis.lebesgue_constant();
        assert!(lambda >= 1.0 - 1e-12 && lambda.is_finite());
    }
}

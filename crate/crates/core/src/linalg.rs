//! Small self-contained linear algebra kernels: dense Cholesky (with jitter
//! retries), dense LU with partial pivoting, banded LU with partial pivoting,
//! a cyclic Jacobi symmetric eigensolver, and conjugate gradients.
//!
//! Dense matrices are flat row-major `Vec<f64>` of length `n * n`; the
//! problem sizes here (correlation matrices, GP kernels, reduced systems)
//! are small enough that cache blocking is not worth the complexity.

use crate::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Factorization(format!(
                        "non-positive pivot {s:.3e} at row {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Cholesky with diagonal jitter retries: on failure the jitter is multiplied
/// by 10 and the factorization retried, up to `max_retries` times. Returns
/// the factor together with the jitter that was actually applied.
pub fn cholesky_with_jitter(
    n: usize,
    a: &[f64],
    initial_jitter: f64,
    max_retries: usize,
) -> Result<(Vec<f64>, f64)> {
    match cholesky(n, a) {
        Ok(l) => return Ok((l, 0.0)),
        Err(_) => {}
    }
    let mut jitter = initial_jitter;
    for _ in 0..max_retries {
        let mut aj = a.to_vec();
        for i in 0..n {
            aj[i * n + i] += jitter;
        }
        if let Ok(l) = cholesky(n, &aj) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization(format!(
        "matrix not positive definite even with jitter {jitter:.3e}"
    )))
}

/// Solve `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    // forward: L y = b
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Dense LU factorization with partial pivoting (for small, possibly
/// non-symmetric systems such as reduced Newton solves).
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, a: &[f64]) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Factorization(format!("singular at column {k}")));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let m = lu[i * n + k] / pivot;
                lu[i * n + k] = m;
                for j in k + 1..n {
                    lu[i * n + j] -= m * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        // rows were swapped in full during factorization, so apply all
        // pivots up front, then substitute
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        for k in 0..n {
            for i in k + 1..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// A band matrix with `kl` sub- and `ku` super-diagonals, stored with `kl`
/// extra super-diagonals of headroom for pivoting fill-in (LAPACK band
/// layout: entry `(i, j)` lives at storage row `kl + ku + i - j`, column `j`).
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>, // (2*kl + ku + 1) x n, column-major
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            ab: vec![0.0; (2 * kl + ku + 1) * n],
        }
    }

    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + self.ldab() * j
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside the band");
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside the band");
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                y[i] += self.ab[self.slot(i, j)] * x[j];
            }
        }
        y
    }

    /// LU factorization with partial pivoting; consumes the matrix since the
    /// factors overwrite the band storage.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku; // effective super-bandwidth after fill-in
        let mut piv = vec![0usize; n];
        for k in 0..n {
            // pivot search within the column's sub-band
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.slot(k, k)].abs();
            for i in k + 1..=imax {
                let v = self.ab[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Factorization(format!(
                    "band matrix singular at column {k}"
                )));
            }
            piv[k] = p;
            let jmax = (k + kv).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.slot(k, k)];
            for i in k + 1..=imax {
                let m = self.ab[self.slot(i, k)] / pivot;
                let s = self.slot(i, k);
                self.ab[s] = m;
                for j in k + 1..=jmax {
                    let src = self.slot(k, j);
                    let dst = self.slot(i, j);
                    self.ab[dst] -= m * self.ab[src];
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            ab: self.ab,
            piv,
        })
    }
}

/// Factored band matrix ready for repeated solves.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + (2 * self.kl + self.ku + 1) * j
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.n, self.kl);
        let kv = self.kl + self.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let imax = (k + kl).min(n - 1);
            for i in k + 1..=imax {
                x[i] -= self.ab[self.slot(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            let jmax = (i + kv).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=jmax {
                s -= self.ab[self.slot(i, j)] * x[j];
            }
            x[i] = s / self.ab[self.slot(i, i)];
        }
        x
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps continue until every off-diagonal entry is below
/// `tol * ||A||_F`. Eigenpairs are returned in descending eigenvalue order;
/// each eigenvector is sign-normalized so its largest-magnitude entry is
/// positive. Eigenvectors are the columns of the returned flat matrix.
pub fn jacobi_eigh(n: usize, a: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if norm == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    let thresh = tol * norm;
    let max_sweeps = 60;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= thresh {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= thresh * 1e-3 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNonConvergence);
    }
    // sort descending, fix sign convention
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    let mut vals = Vec::with_capacity(n);
    let mut vecs = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        vals.push(m[src * n + src]);
        let mut max_k = 0;
        let mut max_abs = 0.0;
        for k in 0..n {
            let e = v[k * n + src].abs();
            if e > max_abs {
                max_abs = e;
                max_k = k;
            }
        }
        let sign = if v[max_k * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vecs[k * n + col] = sign * v[k * n + src];
        }
    }
    Ok((vals, vecs))
}

/// Conjugate gradients for a symmetric positive definite operator given as a
/// matrix-free `apply`. Converges when the residual norm drops below
/// `tol_rel * ||b||`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let target = tol_rel * bnorm;
    if rs.sqrt() <= target {
        return Ok(x);
    }
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::SolverNonConvergence(format!(
                "operator not positive definite (p^T A p = {pap:.3e})"
            )));
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new.sqrt() <= target {
            return Ok(x);
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::SolverNonConvergence(format!(
        "CG residual {:.3e} above target {:.3e} after {max_iter} iterations",
        rs.sqrt(),
        target
    )))
}

/// Dense symmetric matrix-vector product helper for flat row-major storage.
pub fn dense_matvec(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    y
}

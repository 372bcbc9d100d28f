//! Gaussian-process regression with a fixed squared-exponential kernel.
//!
//! One model is fit per scalar output (e.g. per mode coefficient).  The
//! hyperparameters are fixed: unit length scale, unit signal standard
//! deviation, and observation-noise standard deviation `exp(-6)`.  No
//! hyperparameter optimization is performed.  Inputs are rescaled to
//! [0,1] per axis (using the training bounding box) before kernel
//! evaluation so that the unit length scale is meaningful regardless of
//! the parameter units.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::{cholesky_solve, cholesky_with_jitter};
use crate::Result;

/// Observation noise standard deviation, `exp(-6)`.
pub fn noise_std() -> f64 {
    (-6.0f64).exp()
}

/// Embed an angle as a point on the unit circle so that regression over
/// the angle is periodic.
pub fn embed_angle(alpha: f64) -> [f64; 2] {
    [alpha.cos(), alpha.sin()]
}

/// Posterior-mean Gaussian-process interpolant with fixed hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    dim: usize,
    /// Raw training inputs, row-major `n x dim`.
    inputs: Vec<f64>,
    /// Training targets.
    targets: Vec<f64>,
    /// Per-axis lower bound of the training box (for [0,1] rescaling).
    lo: Vec<f64>,
    /// Per-axis scale (hi - lo, or 1 for degenerate axes).
    scale: Vec<f64>,
    /// Precomputed weights `(K + sigma_n^2 I)^{-1} y`.
    weights: Vec<f64>,
    /// Jitter added to reach a positive-definite factorization (0 if none).
    jitter: f64,
}

fn kernel(x: &[f64], y: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        d2 += (a - b) * (a - b);
    }
    (-0.5 * d2).exp()
}

impl GpModel {
    /// Number of training points.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    /// True when the model holds no training points (never constructible
    /// through [`gp_fit`], which requires at least one).
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(a, &v)| (v - self.lo[a]) / self.scale[a])
            .collect()
    }
}

/// Fit the posterior mean weights for a set of scalar observations.
pub fn gp_fit(inputs: &[Vec<f64>], targets: &[f64]) -> Result<GpModel> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "gp_fit requires at least one training point".into(),
        ));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "gp_fit: {} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let dim = inputs[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("gp_fit: zero-dimensional inputs".into()));
    }
    for x in inputs {
        if x.len() != dim {
            return Err(Error::InvalidArgument(
                "gp_fit: inconsistent input dimensions".into(),
            ));
        }
        if let Some(a) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(a));
        }
    }
    if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }

    // Training bounding box for the [0,1] per-axis rescaling.
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for x in inputs {
        for a in 0..dim {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
    }
    let scale: Vec<f64> = (0..dim)
        .map(|a| {
            let s = hi[a] - lo[a];
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let n = inputs.len();
    let normalized: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            (0..dim)
                .map(|a| (x[a] - lo[a]) / scale[a])
                .collect::<Vec<f64>>()
        })
        .collect();

    // Reject (near-)duplicate inputs: the kernel matrix would be singular
    // beyond what the noise term can absorb.
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2.sqrt() < 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "gp_fit: training inputs {i} and {j} coincide"
                )));
            }
        }
    }

    let sn2 = noise_std() * noise_std();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = kernel(&normalized[i], &normalized[j]);
        }
        k[i * n + i] += sn2;
    }
    // One jitter retry at 10x the noise variance.
    let (l, jitter) = cholesky_with_jitter(n, &k, 10.0 * sn2, 1)?;
    let weights = cholesky_solve(n, &l, targets);

    Ok(GpModel {
        dim,
        inputs: inputs.iter().flatten().copied().collect(),
        targets: targets.to_vec(),
        lo,
        scale,
        weights,
        jitter,
    })
}

/// Posterior mean at a query point (zero prior mean).
pub fn gp_predict(model: &GpModel, x: &[f64]) -> f64 {
    assert_eq!(
        x.len(),
        model.dim,
        "gp_predict: query dimension {} does not match training dimension {}",
        x.len(),
        model.dim
    );
    let xn = model.normalize(x);
    let n = model.targets.len();
    let mut out = 0.0;
    for i in 0..n {
        let xi = &model.inputs[i * model.dim..(i + 1) * model.dim];
        let xin: Vec<f64> = (0..model.dim)
            .map(|a| (xi[a] - model.lo[a]) / model.scale[a])
            .collect();
        out += kernel(&xn, &xin) * model.weights[i];
    }
    out
}

impl GpModel {
    /// Jitter that was added to the kernel diagonal during fitting.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(points: &[&[f64]]) -> Vec<Vec<f64>> {
        points.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn single_point_shrinks_by_noise() {
        let model = gp_fit(&vecs(&[&[0.0]]), &[1.0]).unwrap();
        let p = gp_predict(&model, &[0.0]);
        let sn2 = noise_std() * noise_std();
        assert!((p - 1.0 / (1.0 + sn2)).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_targets_near_constant_prediction() {
        // 2D inputs covering the box, all targets equal: the prediction
        // inside the convex hull should stay within 1e-3 relative deviation.
        // The sampling must be dense enough relative to the unit length
        // scale for kernel interpolation of a constant to be this accurate.
        let mut inputs = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                inputs.push(vec![i as f64 / 4.0, j as f64 / 4.0]);
            }
        }
        let targets = vec![2.5; inputs.len()];
        let model = gp_fit(&inputs, &targets).unwrap();
        for &q in &[[0.5, 0.5], [0.3, 0.3], [0.7, 0.6], [0.1, 0.9]] {
            let p = gp_predict(&model, &q);
            assert!(
                (p - 2.5).abs() / 2.5 < 1e-3,
                "prediction {p} deviates from constant 2.5"
            );
        }
    }

    #[test]
    fn linear_coefficient_map_interpolates_held_out_points() {
        // Mode-coefficient map w(t) = a*t sampled on a uniform time grid;
        // held-out mid-points must be recovered to 1e-3 of the data range.
        let a = 0.2;
        let times: Vec<f64> = (0..17).map(|i| i as f64 * 0.05).collect();
        let inputs: Vec<Vec<f64>> = times.iter().map(|&t| vec![t]).collect();
        let targets: Vec<f64> = times.iter().map(|&t| a * t).collect();
        let model = gp_fit(&inputs, &targets).unwrap();
        let range = a * 0.8;
        for i in 0..16 {
            let t = (times[i] + times[i + 1]) / 2.0;
            let p = gp_predict(&model, &[t]);
            assert!(
                (p - a * t).abs() <= 1e-3 * range,
                "held-out error {} at t={t}",
                (p - a * t).abs()
            );
        }
    }

    #[test]
    fn training_points_reproduced_within_noise_scale() {
        // Well-conditioned setup: few points per length scale, smooth
        // targets so little energy sits in the kernel's small eigenmodes.
        let inputs = vecs(&[&[0.0], &[0.25], &[0.5], &[0.75], &[1.0]]);
        let targets: Vec<f64> = inputs.iter().map(|x| 0.3 + 0.5 * x[0]).collect();
        let model = gp_fit(&inputs, &targets).unwrap();
        for (x, &y) in inputs.iter().zip(&targets) {
            let p = gp_predict(&model, x);
            assert!(
                (p - y).abs() < 3.0 * noise_std(),
                "training point not reproduced: {p} vs {y}"
            );
        }
    }

    #[test]
    fn far_from_data_decays_to_zero_mean() {
        let model = gp_fit(&vecs(&[&[0.0], &[1.0]]), &[1.0, -1.0]).unwrap();
        // Raw coordinate 50 normalizes to 50 length scales from the data.
        assert!(gp_predict(&model, &[50.0]).abs() < 1e-10);
    }

    #[test]
    fn symmetric_targets_cancel_at_midpoint() {
        let model = gp_fit(&vecs(&[&[0.0], &[1.0]]), &[1.0, -1.0]).unwrap();
        assert!(gp_predict(&model, &[0.5]).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let inputs = vecs(&[&[0.1], &[0.5], &[0.9], &[0.3]]);
        let targets = vec![1.0, 2.0, -1.0, 0.5];
        let model_a = gp_fit(&inputs, &targets).unwrap();
        let perm = [2usize, 0, 3, 1];
        let inputs_p: Vec<Vec<f64>> = perm.iter().map(|&i| inputs[i].clone()).collect();
        let targets_p: Vec<f64> = perm.iter().map(|&i| targets[i]).collect();
        let model_b = gp_fit(&inputs_p, &targets_p).unwrap();
        for &q in &[0.0, 0.2, 0.47, 0.77, 1.0] {
            let pa = gp_predict(&model_a, &[q]);
            let pb = gp_predict(&model_b, &[q]);
            assert!((pa - pb).abs() < 1e-10);
        }
    }

    #[test]
    fn mirrored_inputs_give_mirrored_predictions() {
        let inputs = vecs(&[&[0.0], &[0.25], &[0.6], &[1.0]]);
        let targets = vec![0.3, -0.2, 0.8, 0.1];
        let model = gp_fit(&inputs, &targets).unwrap();
        let inputs_m: Vec<Vec<f64>> = inputs.iter().map(|x| vec![1.0 - x[0]]).collect();
        let model_m = gp_fit(&inputs_m, &targets).unwrap();
        for &q in &[0.0, 0.3, 0.5, 0.85] {
            let p = gp_predict(&model, &[q]);
            let pm = gp_predict(&model_m, &[1.0 - q]);
            assert!((p - pm).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_inputs_rejected() {
        let err = gp_fit(&vecs(&[&[0.5], &[0.5]]), &[1.0, 2.0]);
        assert!(err.is_err());
    }

    #[test]
    fn angle_embedding_is_periodic() {
        use std::f64::consts::PI;
        let a = embed_angle(0.3);
        let b = embed_angle(0.3 + 2.0 * PI);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
}

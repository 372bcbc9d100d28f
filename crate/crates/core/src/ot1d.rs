//! Closed-form one-dimensional optimal transport via cumulative distribution
//! functions, and the boundary-layer solution family used as an exact oracle
//! for the entropic solver and for the one-mode registration bound.
//!
//! The family is `u_μ(x) = cosh(μ(1−x)) / cosh(μ)` on `[0, 1]`; its
//! normalized density, cdf and the pairwise transport maps all have closed
//! forms that we evaluate in log space so that μ of several hundred remains
//! usable without overflow.

use crate::grid::{GridDensity, GridField, GridVectorField, TensorGrid};
use crate::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;

/// `log(sinh(x))` for `x > 0` without overflow.
fn log_sinh(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.1 {
        x.sinh().ln()
    } else {
        x - LN_2 + (-(-2.0 * x).exp()).ln_1p()
    }
}

/// `asinh(exp(t))`, stable for arbitrarily large `t`.
fn asinh_of_exp(t: f64) -> f64 {
    if t > 30.0 {
        // asinh(z) = log(2z) + O(z^-2)
        LN_2 + t
    } else {
        t.exp().asinh()
    }
}

/// Boundary-layer solution `u_μ(x) = cosh(μ(1−x)) / cosh(μ)`.
pub fn boundary_layer_solution(mu: f64, x: f64) -> f64 {
    debug_assert!(mu > 0.0);
    // e^{-μx} (1 + e^{-2μ(1-x)}) / (1 + e^{-2μ})
    (-mu * x).exp() * (1.0 + (-2.0 * mu * (1.0 - x)).exp()) / (1.0 + (-2.0 * mu).exp())
}

/// Normalized density of `u_μ`: `ρ_μ(x) = μ cosh(μ(1−x)) / sinh(μ)`.
pub fn boundary_layer_density(mu: f64, x: f64) -> f64 {
    mu * (-mu * x).exp() * (1.0 + (-2.0 * mu * (1.0 - x)).exp()) / (1.0 - (-2.0 * mu).exp())
}

/// Closed-form cdf of `ρ_μ`: `1 − sinh(μ(1−x)) / sinh(μ)`.
pub fn boundary_layer_cdf(mu: f64, x: f64) -> f64 {
    if x >= 1.0 {
        return 1.0;
    }
    1.0 - (-mu * x).exp() * (1.0 - (-2.0 * mu * (1.0 - x)).exp()) / (1.0 - (-2.0 * mu).exp())
}

/// Exact transport map pushing `ρ_{μ_src}` to `ρ_{μ_dst}`:
/// `T(y) = 1 − (1/μ_dst) asinh((sinh μ_dst / sinh μ_src) sinh(μ_src(1−y)))`.
pub fn boundary_layer_map(mu_src: f64, mu_dst: f64, y: f64) -> f64 {
    if y >= 1.0 {
        return 1.0;
    }
    let t = log_sinh(mu_dst) - log_sinh(mu_src) + log_sinh(mu_src * (1.0 - y));
    1.0 - asinh_of_exp(t) / mu_dst
}

/// The logarithmic mean `(b − a) / (log b − log a)` of `0 < a < b`.
pub fn logarithmic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > a) {
        return Err(Error::InvalidArgument(format!(
            "logarithmic mean needs 0 < a < b, got ({a}, {b})"
        )));
    }
    Ok((b - a) / (b / a).ln())
}

/// Cumulative distribution function of a 1D density, tabulated at the grid
/// nodes by running trapezoidal integration and normalized so the final
/// value is exactly 1.
#[derive(Debug, Clone)]
pub struct Cdf1D {
    grid: TensorGrid,
    values: Vec<f64>,
}

pub fn cdf_1d(rho: &GridDensity) -> Result<Cdf1D> {
    let grid = *rho.grid();
    if grid.dim() != 1 {
        return Err(Error::InvalidDimension(grid.dim()));
    }
    let h = grid.spacing(0);
    let v = rho.values();
    let n = v.len();
    let mut values = vec![0.0; n];
    for i in 1..n {
        values[i] = values[i - 1] + 0.5 * h * (v[i - 1] + v[i]);
    }
    let total = values[n - 1];
    if total <= 0.0 {
        return Err(Error::NonPositiveMass(total));
    }
    for x in values.iter_mut() {
        *x = (*x / total).clamp(0.0, 1.0);
    }
    values[n - 1] = 1.0;
    Ok(Cdf1D { grid, values })
}

impl Cdf1D {
    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation of the cdf at an arbitrary point.
    pub fn eval(&self, x: f64) -> f64 {
        let [lo, hi] = self.grid.domain(0);
        let xc = x.clamp(lo, hi);
        let t = (xc - lo) / self.grid.spacing(0);
        let mut i = t.floor() as usize;
        if i >= self.values.len() - 1 {
            i = self.values.len() - 2;
        }
        let frac = t - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// Generalized inverse `inf { x : F(x) >= p }` with linear interpolation
    /// between the bracketing nodes.
    pub fn pseudo_inverse(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let n = self.values.len();
        // first node with F >= p
        let mut i = match self
            .values
            .binary_search_by(|v| v.partial_cmp(&p).unwrap())
        {
            Ok(mut k) => {
                // land on the first of any equal run
                while k > 0 && self.values[k - 1] >= p {
                    k -= 1;
                }
                k
            }
            Err(k) => k.min(n - 1),
        };
        while i > 0 && self.values[i - 1] >= p {
            i -= 1;
        }
        if i == 0 {
            return self.grid.coordinate(0, 0);
        }
        let (f0, f1) = (self.values[i - 1], self.values[i]);
        let x1 = self.grid.coordinate(0, i);
        if f1 <= f0 {
            return x1;
        }
        let x0 = self.grid.coordinate(0, i - 1);
        x0 + (p - f0) / (f1 - f0) * (x1 - x0)
    }
}

/// Monotone transport map `T = cdf(σ)^{[-1]} ∘ cdf(ρ)` tabulated at the
/// nodes of ρ's grid.
pub fn transport_map_1d(rho: &GridDensity, sigma: &GridDensity) -> Result<GridVectorField> {
    if rho.grid() != sigma.grid() {
        return Err(Error::GridMismatch);
    }
    let f_rho = cdf_1d(rho)?;
    let f_sigma = cdf_1d(sigma)?;
    let grid = *rho.grid();
    let values: Vec<f64> = f_rho
        .values()
        .iter()
        .map(|&p| f_sigma.pseudo_inverse(p))
        .collect();
    GridVectorField::new(grid, vec![GridField::new(grid, values)?])
}

/// The boundary-layer family `{ u_μ : μ ∈ [μ_min, μ_max] }` with
/// `μ_max = μ_min / ϵ²` for a spread parameter `ϵ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLayerFamily {
    pub mu_min: f64,
    pub mu_max: f64,
    pub epsilon: f64,
    /// Optional positivity floor used when the family is fed to the grid
    /// density pipeline; the closed forms here never need it.
    pub floor: f64,
}

impl BoundaryLayerFamily {
    pub fn new(mu_min: f64, epsilon: f64) -> Result<Self> {
        if !(mu_min > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mu_min must exceed 1, got {mu_min}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "spread parameter must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(Self {
            mu_min,
            mu_max: mu_min / (epsilon * epsilon),
            epsilon,
            floor: 0.0,
        })
    }

    /// Reference parameter: the logarithmic mean of the endpoints.
    pub fn mu_bar(&self) -> f64 {
        logarithmic_mean(self.mu_min, self.mu_max).expect("valid family endpoints")
    }

    /// `k` log-spaced parameter samples covering `[μ_min, μ_max]`.
    pub fn sample_mus(&self, k: usize) -> Vec<f64> {
        let (la, lb) = (self.mu_min.ln(), self.mu_max.ln());
        (0..k)
            .map(|i| {
                let t = if k == 1 {
                    0.0
                } else {
                    i as f64 / (k - 1) as f64
                };
                (la + t * (lb - la)).exp()
            })
            .collect()
    }

    fn c(&self, mu: f64) -> f64 {
        (self.mu_bar() - mu) / mu
    }

    /// One-mode coefficient `w(μ) = −c(μ)/c(μ_min)` with `c(μ) = (μ̄−μ)/μ`.
    pub fn one_mode_weight(&self, mu: f64) -> f64 {
        -self.c(mu) / self.c(self.mu_min)
    }

    /// `‖u_μ̄ − u_μ∘T_{ρ_μ̄→ρ_μ}‖_{L²(0,1)}` by trapezoidal quadrature on an
    /// `n`-node grid; the exact-transport discrepancy of the family.
    pub fn exact_transport_error(&self, mu: f64, n: usize) -> f64 {
        let mu_bar = self.mu_bar();
        self.l2_error(mu, n, |y| boundary_layer_map(mu_bar, mu, y))
    }

    /// Registered error with the single trial mode
    /// `∂_yξ₁ = T_{ρ_μ̄→ρ_μ_min} − id` and weight `w(μ)`:
    /// `‖u_μ̄ − u_μ∘Φ_μ^{-1}‖` with `Φ_μ^{-1}(y) = y − w(μ)(T(y) − y)`.
    pub fn one_mode_error(&self, mu: f64, n: usize) -> f64 {
        let mu_bar = self.mu_bar();
        let w = self.one_mode_weight(mu);
        self.l2_error(mu, n, |y| {
            let t = boundary_layer_map(mu_bar, self.mu_min, y);
            y - w * (t - y)
        })
    }

    fn l2_error(&self, mu: f64, n: usize, phi_inv: impl Fn(f64) -> f64) -> f64 {
        let mu_bar = self.mu_bar();
        let h = 1.0 / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let y = i as f64 * h;
            let d = boundary_layer_solution(mu_bar, y) - boundary_layer_solution(mu, phi_inv(y));
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            acc += w * d * d;
        }
        acc.sqrt()
    }
}

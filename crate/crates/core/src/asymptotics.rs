//! Sandwich covariance `Σ = V⁻¹ Ω V⁻¹` of the contrast estimator.
//!
//! `V` is the Hessian of the limit contrast, `2⟨∂l/∂θ_k, ∂l/∂θ_j⟩`. The
//! long-run score variance is assembled as
//!
//! `Ω = 4(P2 − P1) + Σ_{k≥1} 4[(M_k − P1) + (M_k − P1)′]`
//!
//! with `P1 = μμ′`, `μ = E[Z₂ u*_{∇l}(Z₁)]`, `P2 = E[Z₂² u*_{∇l}(Z₁) u*_{∇l}(Z₁)′]`
//! and the lag-k cross moments `M_k = E[Z₂ u*_{∇l}(Z₁) Z_{k+2} u*_{∇l}(Z_{k+1})′]`.
//! For `k ≥ 2` the noise integrates out and `M_k` is a moment of the hidden
//! chain alone; lag 1 shares `Z₂` and depends on the noise law.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contrast::{gradient_kernels, grad_l_coefficients, psi_coefficients, ContrastObjective};
use crate::deconv::{Noise, QuadratureConfig, SpectralGrid};
use crate::error::{Error, Result};
use crate::gauss::{damped_expectation, hermite, Poly};
use crate::model::{ModelKind, Theta};

pub const DEFAULT_Q_TRUNC: usize = 100;

/// Lags with `|φ|^{k−1}` below this use the Hermite expansion of `M_k − P1`.
const SERIES_SWITCH: f64 = 0.03;
const SERIES_MAX_ORDER: usize = 24;

fn sym(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Closed-form Hessian of the limit contrast at `θ₀ = theta`.
pub fn hessian_v(theta: &Theta) -> Matrix2<f64> {
    let phi = theta.phi;
    let g = theta.gamma2().sqrt();
    let one_m = 1.0 - phi * phi;
    let pre = 1.0 / (8.0 * PI.sqrt() * one_m * one_m);
    let p2 = phi * phi;
    let v11 = g * (7.0 * p2 * p2 - 4.0 * p2 + 4.0);
    let v12 = (-5.0 * p2 * p2 * phi + 3.0 * p2 * phi + 2.0 * phi) / (2.0 * g * one_m);
    let v22 = 7.0 * p2 / (4.0 * g * g * g);
    Matrix2::new(v11, v12, v12, v22) * pre
}

/// `μ = E[b_φ(X) ∇_θ l_θ(X)]`, half the gradient of `‖l_θ‖²`.
pub fn score_mean(theta: &Theta) -> [f64; 2] {
    let g = crate::contrast::l2_norm_sq_grad(theta);
    [0.5 * g[0], 0.5 * g[1]]
}

/// `P1 = μμ′`.
pub fn p1_matrix(theta: &Theta) -> Matrix2<f64> {
    let m = score_mean(theta);
    Matrix2::new(m[0] * m[0], m[0] * m[1], m[1] * m[0], m[1] * m[1])
}

/// Closed-form `P2` for Gaussian noise.
pub fn p2_matrix_ar1(theta: &Theta, sigma_eps2: f64) -> Result<Matrix2<f64>> {
    let psi = psi_coefficients(theta, sigma_eps2)?;
    let g2 = theta.gamma2();
    let a = g2 - sigma_eps2;
    let s = g2 + sigma_eps2;
    let c = theta.phi * g2;
    let kappa2 = (c / s).powi(2);
    let resid = (s * s - c * c) / s;
    let w = 1.0 / (1.0 / s + 2.0 / a);
    let f = (w / s).sqrt();
    let entry = |r: usize, k: usize| {
        let (r1, r2) = (psi[r][0], psi[r][1]);
        let (k1, k2) = (psi[k][0], psi[k][1]);
        f * (r1 * k1 * w * (resid + 3.0 * kappa2 * w)
            + 3.0 * (r1 * k2 + r2 * k1) * w * w * (resid + 5.0 * kappa2 * w)
            + 15.0 * r2 * k2 * w.powi(3) * (resid + 7.0 * kappa2 * w))
    };
    let off = entry(0, 1);
    Ok(Matrix2::new(entry(0, 0), off, off, entry(1, 1)))
}

/// `Σ_p coeffs[p] x_var^p` for an odd cubic `[c1, c3]`.
fn odd_cubic(var: usize, c: [f64; 2]) -> Poly {
    Poly::univariate(var, &[0.0, c[0], 0.0, c[1]])
}

fn stationary_cov(theta: &Theta, times: &[usize], sigma_eps2: f64) -> DMatrix<f64> {
    let g2 = theta.gamma2();
    let d = times.len();
    DMatrix::from_fn(d, d, |i, j| {
        let lag = times[i].abs_diff(times[j]) as i32;
        theta.phi.powi(lag) * g2 + if i == j { sigma_eps2 } else { 0.0 }
    })
}

fn matrix_from_entries(f: impl Fn(usize, usize) -> Result<f64>) -> Result<Matrix2<f64>> {
    Ok(Matrix2::new(f(0, 0)?, f(0, 1)?, f(1, 0)?, f(1, 1)?))
}

/// Lag-1 cross moment `M_1` under Gaussian noise.
fn lag1_moment_gaussian(theta: &Theta, sigma_eps2: f64) -> Result<Matrix2<f64>> {
    let psi = psi_coefficients(theta, sigma_eps2)?;
    let a = theta.gamma2() - sigma_eps2;
    let cov = stationary_cov(theta, &[1, 2, 3], sigma_eps2);
    let damp = [1.0 / a, 1.0 / a, 0.0];
    let z2z3 = Poly::monomial(1, 1, 1.0).mul(&Poly::monomial(2, 1, 1.0));
    matrix_from_entries(|r, c| {
        let p = odd_cubic(0, psi[r]).mul(&odd_cubic(1, psi[c])).mul(&z2z3);
        damped_expectation(&cov, &damp, &p)
    })
}

/// `M_k` for `k ≥ 2` as a moment of the hidden chain:
/// `E[∇l(X₁) X₂ · φ X_{k+1} ∇l(X_{k+1})′]`.
fn lag_moment_hidden(theta: &Theta, k: usize) -> Result<Matrix2<f64>> {
    let g2 = theta.gamma2();
    let coef = grad_l_coefficients(theta);
    let cov = stationary_cov(theta, &[1, 2, k + 1], 0.0);
    let damp = [1.0 / g2, 0.0, 1.0 / g2];
    let norm = 1.0 / (2.0 * PI * g2);
    let x2x3 = Poly::monomial(1, 1, 1.0).mul(&Poly::monomial(2, 1, theta.phi));
    matrix_from_entries(|r, c| {
        let p = odd_cubic(0, coef[r]).mul(&odd_cubic(2, coef[c])).mul(&x2x3);
        Ok(norm * damped_expectation(&cov, &damp, &p)?)
    })
}

/// `M_k − P1` for `k ≥ 2` by Mehler's expansion in the correlation
/// `ρ = φ^{k−1}` between `X₂` and `X_{k+1}`; avoids cancellation when
/// the excess is many orders below `P1`.
fn lag_excess_series(theta: &Theta, k: usize) -> Result<Matrix2<f64>> {
    let g2 = theta.gamma2();
    let gamma = g2.sqrt();
    let rho = theta.phi.powi(k as i32 - 1);
    let coef = grad_l_coefficients(theta);
    let norm = 1.0 / (2.0 * PI * g2).sqrt();
    let cov2 = stationary_cov(theta, &[1, 2], 0.0);
    let cov1 = DMatrix::from_element(1, 1, g2);
    let mut out = Matrix2::zeros();
    let mut m = 2;
    let mut factorial = 2.0;
    while m <= SERIES_MAX_ORDER {
        let weight = rho.powi(m as i32) / factorial;
        if weight.abs() < 1e-300 {
            break;
        }
        let he2 = hermite(1, m, gamma);
        let he1 = hermite(0, m, gamma);
        let mut gm = [0.0; 2];
        let mut hm = [0.0; 2];
        for r in 0..2 {
            let p = odd_cubic(0, coef[r]).mul(&Poly::monomial(1, 1, 1.0)).mul(&he2);
            gm[r] = norm * damped_expectation(&cov2, &[1.0 / g2, 0.0], &p)?;
            let q = odd_cubic(0, coef[r]).mul(&Poly::monomial(0, 1, theta.phi)).mul(&he1);
            hm[r] = norm * damped_expectation(&cov1, &[1.0 / g2], &q)?;
        }
        for r in 0..2 {
            for c in 0..2 {
                out[(r, c)] += weight * gm[r] * hm[c];
            }
        }
        if weight.abs() < 1e-22 {
            break;
        }
        factorial *= ((m + 1) * (m + 2)) as f64;
        m += 2;
    }
    Ok(out)
}

/// Exact lag-k cross moment `M_k` under Gaussian noise (`k ≥ 1`).
pub fn lag_cross_moment(theta: &Theta, sigma_eps2: f64, k: usize) -> Result<Matrix2<f64>> {
    match k {
        0 => Err(Error::InvalidParameter("lag must be >= 1".into())),
        1 => lag1_moment_gaussian(theta, sigma_eps2),
        _ => {
            psi_coefficients(theta, sigma_eps2)?;
            lag_moment_hidden(theta, k)
        }
    }
}

/// `M_k − P1` without the cancellation of forming `M_k` first when small.
/// For `k ≥ 2` the noise does not enter.
pub fn lag_excess(theta: &Theta, sigma_eps2: f64, k: usize) -> Result<Matrix2<f64>> {
    match k {
        0 => Err(Error::InvalidParameter("lag must be >= 1".into())),
        1 => Ok(lag1_moment_gaussian(theta, sigma_eps2)? - p1_matrix(theta)),
        _ => hidden_lag_excess(theta, k),
    }
}

fn hidden_lag_excess(theta: &Theta, k: usize) -> Result<Matrix2<f64>> {
    if theta.phi.abs().powi(k as i32 - 1) <= SERIES_SWITCH {
        lag_excess_series(theta, k)
    } else {
        Ok(lag_moment_hidden(theta, k)? - p1_matrix(theta))
    }
}

/// Symmetrized lag cross moment `C̃_j = P1 + sym(M_{j−1} − P1)`, so that
/// `Ω = 4(P2 − P1) + 8 Σ_{j≥2} (C̃_j − P1)`.
pub fn c_tilde(theta: &Theta, sigma_eps2: f64, j: usize) -> Result<Matrix2<f64>> {
    if j < 2 {
        return Err(Error::InvalidParameter(format!("lag index j = {j} must be >= 2")));
    }
    Ok(p1_matrix(theta) + sym(&lag_excess(theta, sigma_eps2, j - 1)?))
}

/// `Ω_j = 4(C̃_j − P1)`, computed without subtracting `P1`.
pub fn omega_j(theta: &Theta, sigma_eps2: f64, j: usize) -> Result<Matrix2<f64>> {
    if j < 2 {
        return Err(Error::InvalidParameter(format!("lag index j = {j} must be >= 2")));
    }
    Ok(sym(&lag_excess(theta, sigma_eps2, j - 1)?) * 4.0)
}

/// `E[b(X₁)∇l(X₁) b(X_j)∇l(X_j)′]` for the hidden chain, `j ≥ 2`.
pub fn lag_product_moment(theta: &Theta, j: usize) -> Result<Matrix2<f64>> {
    if j < 2 {
        return Err(Error::InvalidParameter(format!("lag index j = {j} must be >= 2")));
    }
    let g2 = theta.gamma2();
    let coef = grad_l_coefficients(theta);
    let cov = stationary_cov(theta, &[1, j], 0.0);
    let damp = [1.0 / g2, 1.0 / g2];
    let norm = 1.0 / (2.0 * PI * g2);
    let b = Poly::monomial(0, 1, theta.phi).mul(&Poly::monomial(1, 1, theta.phi));
    matrix_from_entries(|r, c| {
        let p = odd_cubic(0, coef[r]).mul(&odd_cubic(1, coef[c])).mul(&b);
        Ok(norm * damped_expectation(&cov, &damp, &p)?)
    })
}

/// Empirical `P2` and lag-1 cross moment from `u*_{∇l}` values at each observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlugInMoments {
    pub p2: Matrix2<f64>,
    pub lag1: Matrix2<f64>,
}

fn plug_in_from_values(z: &[f64], u: &[[f64; 2]]) -> Result<PlugInMoments> {
    if z.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: z.len() });
    }
    let outer = |a: [f64; 2], b: [f64; 2]| Matrix2::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]);
    let mut p2 = Matrix2::zeros();
    for i in 0..z.len() - 1 {
        p2 += outer(u[i], u[i]) * (z[i + 1] * z[i + 1]);
    }
    p2 /= (z.len() - 1) as f64;
    let mut lag1 = Matrix2::zeros();
    for i in 0..z.len() - 2 {
        let a = [z[i + 1] * u[i][0], z[i + 1] * u[i][1]];
        let b = [z[i + 2] * u[i + 1][0], z[i + 2] * u[i + 1][1]];
        lag1 += outer(a, b);
    }
    lag1 /= (z.len() - 2) as f64;
    Ok(PlugInMoments { p2, lag1 })
}

pub fn plug_in_moments(objective: &ContrastObjective, theta: &Theta) -> Result<PlugInMoments> {
    let u = objective.grad_kernel_values(theta)?;
    plug_in_from_values(&objective.z, &u)
}

/// `(1/(n−1)) Σ Z²_{i+1} u*_{∇l}(Z_i) u*_{∇l}(Z_i)′` with `u*` by quadrature
/// against `noise`.
pub fn p2_hat(theta: &Theta, z: &[f64], noise: &Noise, q: &QuadratureConfig) -> Result<Matrix2<f64>> {
    if z.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: z.len() });
    }
    let g2 = theta.gamma2();
    let ymax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let grid = SpectralGrid::new(noise, g2, g2, ymax, q)?;
    let vals = grid.eval_many(&gradient_kernels(theta), &z[..z.len() - 1]);
    let mut p2 = Matrix2::zeros();
    for (i, v) in vals.iter().enumerate() {
        let w = z[i + 1] * z[i + 1];
        p2 += Matrix2::new(v[0] * v[0], v[0] * v[1], v[1] * v[0], v[1] * v[1]) * w;
    }
    Ok(p2 / vals.len() as f64)
}

pub fn p2_hat_sv(theta: &Theta, z: &[f64], beta: f64, q: &QuadratureConfig) -> Result<Matrix2<f64>> {
    p2_hat(theta, z, &Noise::LogChiSq { beta }, q)
}

/// Where the lag-0 and lag-1 noise-dependent moments come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum P2Source {
    /// Gaussian noise: exact closed forms.
    ClosedForm,
    /// Empirical moments, used when the noise law has no closed form.
    PlugIn(PlugInMoments),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichParts {
    pub v: Matrix2<f64>,
    /// `4(P2 − P1)`
    pub omega1: Matrix2<f64>,
    /// `2 Σ_{j=2}^{q_trunc} Ω_j`
    pub omega_tail: Matrix2<f64>,
    pub sigma: Matrix2<f64>,
    pub q_trunc: usize,
}

impl SandwichParts {
    pub fn omega(&self) -> Matrix2<f64> {
        self.omega1 + self.omega_tail
    }
}

fn rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

impl Serialize for SandwichParts {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Rows {
            v: [[f64; 2]; 2],
            omega1: [[f64; 2]; 2],
            omega_tail: [[f64; 2]; 2],
            sigma: [[f64; 2]; 2],
            q_trunc: usize,
        }
        Rows {
            v: rows(&self.v),
            omega1: rows(&self.omega1),
            omega_tail: rows(&self.omega_tail),
            sigma: rows(&self.sigma),
            q_trunc: self.q_trunc,
        }
        .serialize(s)
    }
}

fn sym_eigen(m: &Matrix2<f64>) -> (f64, f64) {
    let e = nalgebra::SymmetricEigen::new(*m).eigenvalues;
    (e[0].min(e[1]), e[0].max(e[1]))
}

/// Symmetrizes and clips eigenvalues in `[−1e−10, 0)` to zero.
fn make_psd(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let s = sym(m);
    let eig = nalgebra::SymmetricEigen::new(s);
    let lo = eig.eigenvalues.min();
    if lo >= 0.0 {
        return Ok(s);
    }
    if lo < -1e-10 {
        return Err(Error::NotPsd(lo));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Matrix2::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(sym(&out))
}

pub fn sigma_matrix(theta: &Theta, sigma_eps2: f64, q_trunc: usize, p2_source: P2Source) -> Result<SandwichParts> {
    if q_trunc < 2 {
        return Err(Error::InvalidParameter(format!("q_trunc = {q_trunc} must be >= 2")));
    }
    Theta::new(theta.phi, theta.sigma2)?;
    let v = hessian_v(theta);
    let (lo, hi) = sym_eigen(&v);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > 1e12 {
        return Err(Error::IllConditioned(cond));
    }
    let p1 = p1_matrix(theta);
    let (p2, lag1_excess) = match p2_source {
        P2Source::ClosedForm => (p2_matrix_ar1(theta, sigma_eps2)?, lag_excess(theta, sigma_eps2, 1)?),
        P2Source::PlugIn(pm) => (pm.p2, pm.lag1 - p1),
    };
    let omega1 = (p2 - p1) * 4.0;
    let mut omega_tail = (lag1_excess + lag1_excess.transpose()) * 4.0;
    for k in 2..q_trunc {
        let e = hidden_lag_excess(theta, k)?;
        omega_tail += (e + e.transpose()) * 4.0;
    }
    let v_inv = v.try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
    let sigma = make_psd(&(v_inv * (omega1 + omega_tail) * v_inv.transpose()))?;
    Ok(SandwichParts { v, omega1, omega_tail, sigma, q_trunc })
}

/// Sandwich for a fitted contrast objective: closed forms for Gaussian
/// noise, plug-in lag-0 and lag-1 moments otherwise.
pub fn contrast_sandwich(objective: &ContrastObjective, theta: &Theta, q_trunc: usize) -> Result<SandwichParts> {
    let source = match objective.model.kind {
        ModelKind::GaussianAr1 => P2Source::ClosedForm,
        ModelKind::LogSv => P2Source::PlugIn(plug_in_moments(objective, theta)?),
    };
    sigma_matrix(theta, objective.model.sigma_eps2, q_trunc, source)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Per-coordinate Wald intervals `θ̂_i ± z_{1−α/2} √(Σ_ii / n)`.
pub fn confidence_interval(theta_hat: &Theta, sigma: &Matrix2<f64>, n: usize, alpha: f64) -> Result<[ConfidenceInterval; 2]> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let zq = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let centre = theta_hat.as_array();
    let mut out = [ConfidenceInterval { lo: 0.0, hi: 0.0, alpha }; 2];
    for i in 0..2 {
        let d = sigma[(i, i)];
        if d < 0.0 || d.is_nan() {
            return Err(Error::NotPsd(d));
        }
        let half = zq * (d / n as f64).sqrt();
        out[i] = ConfidenceInterval { lo: centre[i] - half, hi: centre[i] + half, alpha };
    }
    Ok(out)
}

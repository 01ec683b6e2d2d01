//! The deconvolution contrast and its minimizer.
//!
//! With `l_θ(x) = φ x g_{γ²}(x)` (`g_v` the centered Gaussian density of
//! variance `v`), the empirical contrast is
//!
//! `‖l_θ‖² − (2/(n−1)) Σ_i Z_{i+1} u*_θ(Z_i)`
//!
//! where `u*_θ` deconvolves `l_θ` against the noise law.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::deconv::{deconvolve, EmpiricalTransform, Noise, OddKernel, QuadValue, QuadratureConfig, SpectralGrid};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, Theta};
use crate::optim::{multistart, NelderMeadConfig};

/// Outcome of a box-constrained minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub theta_hat: Theta,
    /// Value of the minimized criterion at `theta_hat`.
    pub objective_value: f64,
    pub restarts_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub optimizer: NelderMeadConfig,
    pub quadrature: QuadratureConfig,
}

/// `‖l_θ‖² = φ²γ/(4√π)`.
pub fn l2_norm_sq(theta: &Theta) -> f64 {
    theta.phi * theta.phi * theta.gamma2().sqrt() / (4.0 * PI.sqrt())
}

/// Gradient of `‖l_θ‖²` in `(φ, σ²)`.
pub fn l2_norm_sq_grad(theta: &Theta) -> [f64; 2] {
    let (phi, g) = (theta.phi, theta.gamma2().sqrt());
    let one_m = 1.0 - phi * phi;
    [
        phi * g * (2.0 - phi * phi) / (4.0 * PI.sqrt() * one_m),
        phi * phi / (8.0 * PI.sqrt() * g * one_m),
    ]
}

fn gauss_density(v: f64, x: f64) -> f64 {
    (-x * x / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// `l_θ(x) = φ x g_{γ²}(x)`.
pub fn l_theta(theta: &Theta, x: f64) -> f64 {
    theta.phi * x * gauss_density(theta.gamma2(), x)
}

/// Polynomial parts `(p_φ, p_σ²)` of `∇_θ l_θ(x) = g_{γ²}(x) · (p_φ(x), p_σ²(x))`,
/// as `[coef of x, coef of x³]` each.
pub fn grad_l_coefficients(theta: &Theta) -> [[f64; 2]; 2] {
    let (phi, g2) = (theta.phi, theta.gamma2());
    let one_m = 1.0 - phi * phi;
    [
        [(1.0 - 2.0 * phi * phi) / one_m, phi * phi / (g2 * one_m)],
        [-phi / (2.0 * g2 * one_m), phi / (2.0 * g2 * g2 * one_m)],
    ]
}

pub fn grad_l_theta(theta: &Theta, x: f64) -> [f64; 2] {
    let g = gauss_density(theta.gamma2(), x);
    grad_l_coefficients(theta).map(|[c1, c3]| g * (c1 * x + c3 * x * x * x))
}

/// Fourier kernel of `l_θ`.
pub fn contrast_kernel(theta: &Theta) -> OddKernel {
    let g2 = theta.gamma2();
    OddKernel { c0: theta.phi * g2, c2: 0.0, gamma2: g2 }
}

/// Fourier kernels of `∂l_θ/∂φ` and `∂l_θ/∂σ²`.
pub fn gradient_kernels(theta: &Theta) -> [OddKernel; 2] {
    let (phi, g2) = (theta.phi, theta.gamma2());
    let one_m = 1.0 - phi * phi;
    [
        OddKernel { c0: g2 * (1.0 + phi * phi) / one_m, c2: -g2 * g2 * phi * phi / one_m, gamma2: g2 },
        OddKernel { c0: phi / one_m, c2: -phi * g2 / (2.0 * one_m), gamma2: g2 },
    ]
}

fn deconv_width(theta: &Theta, sigma_eps2: f64) -> Result<f64> {
    let g2 = theta.gamma2();
    if g2 <= sigma_eps2 {
        return Err(Error::DeconvolutionDomain { gamma2: g2, sigma_eps2 });
    }
    Ok(g2 - sigma_eps2)
}

/// Closed-form `u*_θ` under Gaussian noise.
pub fn u_star_gaussian(theta: &Theta, sigma_eps2: f64, y: f64) -> Result<f64> {
    let a = deconv_width(theta, sigma_eps2)?;
    let g2 = theta.gamma2();
    Ok(theta.phi * g2 * y * (-y * y / (2.0 * a)).exp() / ((2.0 * PI).sqrt() * a.powf(1.5)))
}

/// `[[Ψ_φ1, Ψ_φ2], [Ψ_σ1, Ψ_σ2]]` with `u*_{∂l}(y) = (Ψ1 y + Ψ2 y³) e^{−y²/(2a)}`.
pub fn psi_coefficients(theta: &Theta, sigma_eps2: f64) -> Result<[[f64; 2]; 2]> {
    let a = deconv_width(theta, sigma_eps2)?;
    let norm = (2.0 * PI).sqrt();
    Ok(gradient_kernels(theta).map(|k| {
        [(k.c0 + 3.0 * k.c2 / a) / (norm * a.powf(1.5)), -k.c2 / (norm * a.powf(3.5))]
    }))
}

/// Closed-form `u*` of `∇_θ l_θ` under Gaussian noise.
pub fn u_star_grad_gaussian(theta: &Theta, sigma_eps2: f64, y: f64) -> Result<[f64; 2]> {
    let a = deconv_width(theta, sigma_eps2)?;
    let psi = psi_coefficients(theta, sigma_eps2)?;
    let e = (-y * y / (2.0 * a)).exp();
    Ok(psi.map(|[p1, p2]| (p1 * y + p2 * y * y * y) * e))
}

/// `u*_θ(y)` under log-chi-square noise by quadrature.
pub fn u_star_sv(theta: &Theta, beta: f64, y: f64, q: &QuadratureConfig) -> Result<QuadValue> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must be > 0")));
    }
    let v = deconvolve(&contrast_kernel(theta), &Noise::LogChiSq { beta }, y, q)?;
    if v.im != 0.0 {
        log::trace!("u_star_sv imaginary residual {:e} at y = {y}", v.im);
    }
    Ok(v)
}

/// Limit of the contrast when the data come from `theta0`.
pub fn population_contrast_ar1(theta: &Theta, theta0: &Theta) -> f64 {
    let (g2, g02) = (theta.gamma2(), theta0.gamma2());
    l2_norm_sq(theta)
        - (2.0 / PI).sqrt() * theta.phi * theta0.phi * g2 * g02 / (g2 + g02).powf(1.5)
}

fn check_len(z: &[f64]) -> Result<()> {
    if z.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("observations must be finite".into()));
    }
    Ok(())
}

/// Empirical contrast for one data set, with the SV transform precomputed.
#[derive(Debug, Clone)]
pub struct ContrastObjective {
    pub model: ModelSpec,
    pub z: Vec<f64>,
    pub quadrature: QuadratureConfig,
    transform: Option<EmpiricalTransform>,
}

impl ContrastObjective {
    pub fn new(model: ModelSpec, z: &[f64], quadrature: QuadratureConfig) -> Result<Self> {
        check_len(z)?;
        quadrature.validate()?;
        let transform = match model.kind {
            ModelKind::GaussianAr1 => None,
            ModelKind::LogSv => {
                let grid = sv_grid(&model, z, &quadrature)?;
                Some(EmpiricalTransform::new(grid, z))
            }
        };
        Ok(Self { model, z: z.to_vec(), quadrature, transform })
    }

    pub fn value(&self, theta: &Theta) -> Result<f64> {
        let pairs = (self.z.len() - 1) as f64;
        let cross = match &self.transform {
            None => {
                let mut s = 0.0;
                for w in self.z.windows(2) {
                    s += w[1] * u_star_gaussian(theta, self.model.sigma_eps2, w[0])?;
                }
                s
            }
            Some(t) => t.pair_sum(&contrast_kernel(theta)),
        };
        Ok(l2_norm_sq(theta) - 2.0 * cross / pairs)
    }

    /// `u*` of `∇_θ l_θ` at every observation.
    pub fn grad_kernel_values(&self, theta: &Theta) -> Result<Vec<[f64; 2]>> {
        match &self.transform {
            None => self.z.iter().map(|&y| u_star_grad_gaussian(theta, self.model.sigma_eps2, y)).collect(),
            Some(t) => Ok(t
                .grid()
                .eval_many(&gradient_kernels(theta), &self.z)
                .into_iter()
                .map(|v| [v[0], v[1]])
                .collect()),
        }
    }
}

fn sv_grid(model: &ModelSpec, z: &[f64], q: &QuadratureConfig) -> Result<SpectralGrid> {
    let (g_lo, g_hi) = model.bounds.gamma2_range();
    let ymax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    SpectralGrid::new(&Noise::from_spec(model), g_lo, g_hi, ymax, q)
}

/// Contrast value at `theta` with default quadrature.
pub fn objective(model: &ModelSpec, theta: &Theta, z: &[f64]) -> Result<f64> {
    ContrastObjective::new(*model, z, QuadratureConfig::default())?.value(theta)
}

/// Contrast value using pointwise quadrature deconvolution against any noise
/// law; slow, meant for cross-checking the closed form.
pub fn objective_by_quadrature(theta: &Theta, noise: &Noise, z: &[f64], q: &QuadratureConfig) -> Result<f64> {
    check_len(z)?;
    let kernel = contrast_kernel(theta);
    let mut s = 0.0;
    for w in z.windows(2) {
        s += w[1] * deconvolve(&kernel, noise, w[0], q)?.re;
    }
    Ok(l2_norm_sq(theta) - 2.0 * s / (z.len() - 1) as f64)
}

/// Per-pair gradients `∇_θ m_θ(Z_i, Z_{i+1}) = ∇‖l_θ‖² − 2 Z_{i+1} u*_{∇l}(Z_i)`.
pub fn pair_scores(objective: &ContrastObjective, theta: &Theta) -> Result<Vec<[f64; 2]>> {
    let grad_norm = l2_norm_sq_grad(theta);
    let u = objective.grad_kernel_values(theta)?;
    Ok(objective
        .z
        .windows(2)
        .zip(&u)
        .map(|(w, ui)| [grad_norm[0] - 2.0 * w[1] * ui[0], grad_norm[1] - 2.0 * w[1] * ui[1]])
        .collect())
}

pub fn estimate(model: &ModelSpec, z: &[f64]) -> Result<MinimizeResult> {
    estimate_with(model, z, &ContrastConfig::default())
}

pub fn estimate_with(model: &ModelSpec, z: &[f64], cfg: &ContrastConfig) -> Result<MinimizeResult> {
    let obj = ContrastObjective::new(*model, z, cfg.quadrature)?;
    minimize_objective(&obj, &cfg.optimizer)
}

pub fn minimize_objective(obj: &ContrastObjective, nm: &NelderMeadConfig) -> Result<MinimizeResult> {
    let mut last_err = None;
    let out = multistart(
        |p| match obj.value(&Theta::from_array(p)) {
            Ok(v) => v,
            Err(e) => {
                last_err = Some(e);
                f64::INFINITY
            }
        },
        &obj.model.bounds,
        nm,
    );
    if !out.best.f.is_finite() {
        return Err(last_err.unwrap_or_else(|| Error::Quadrature("contrast is not finite anywhere".into())));
    }
    Ok(MinimizeResult {
        theta_hat: Theta::from_array(out.best.x),
        objective_value: out.best.f,
        restarts_used: out.starts,
        converged: out.any_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_ar1;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const T0: Theta = Theta { phi: 0.7, sigma2: 0.3 };

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm_sq(&Theta { phi: 0.0, sigma2: 0.3 }), 0.0);
        let v = l2_norm_sq(&T0);
        let numeric = simpson(|x| l_theta(&T0, x).powi(2), -15.0, 15.0, 20_000);
        assert_relative_eq!(v, numeric, max_relative = 1e-10);
        assert!((v - 0.05301).abs() < 1e-5, "{v}");
        // Doubling φ at fixed γ² quadruples the value.
        let g2 = T0.gamma2();
        let at = |phi: f64| l2_norm_sq(&Theta { phi, sigma2: g2 * (1.0 - phi * phi) });
        assert_relative_eq!(at(0.6), 4.0 * at(0.3), max_relative = 1e-12);
    }

    #[test]
    fn l2_norm_gradient_matches_finite_differences() {
        let h = 1e-6;
        let g = l2_norm_sq_grad(&T0);
        let dphi = (l2_norm_sq(&Theta { phi: 0.7 + h, ..T0 }) - l2_norm_sq(&Theta { phi: 0.7 - h, ..T0 })) / (2.0 * h);
        let ds = (l2_norm_sq(&Theta { sigma2: 0.3 + h, ..T0 }) - l2_norm_sq(&Theta { sigma2: 0.3 - h, ..T0 })) / (2.0 * h);
        assert_relative_eq!(g[0], dphi, max_relative = 1e-8);
        assert_relative_eq!(g[1], ds, max_relative = 1e-8);
    }

    #[test]
    fn grad_l_matches_finite_differences() {
        let h = 1e-6;
        for &x in &[-1.3, 0.2, 0.9, 2.5] {
            let g = grad_l_theta(&T0, x);
            let dphi = (l_theta(&Theta { phi: 0.7 + h, ..T0 }, x) - l_theta(&Theta { phi: 0.7 - h, ..T0 }, x)) / (2.0 * h);
            let ds = (l_theta(&Theta { sigma2: 0.3 + h, ..T0 }, x) - l_theta(&Theta { sigma2: 0.3 - h, ..T0 }, x)) / (2.0 * h);
            assert!((g[0] - dphi).abs() < 1e-8 && (g[1] - ds).abs() < 1e-8);
        }
    }

    #[test]
    fn u_star_gaussian_examples() {
        assert_eq!(u_star_gaussian(&T0, 0.1, 0.0).unwrap(), 0.0);
        assert_eq!(u_star_gaussian(&Theta { phi: 0.0, sigma2: 0.3 }, 0.1, 1.3).unwrap(), 0.0);
        let v = u_star_gaussian(&T0, 0.1, 1.0).unwrap();
        assert!((v - 0.17291).abs() < 1e-4, "{v}");
        // Independent quadrature of (1/2π)∫ e^{iyx} l*(−x)/f*(x) dx, real part only.
        let g2 = T0.gamma2();
        let integrand = |x: f64| {
            let mag = 0.7 * g2 * x * (-0.5 * (g2 - 0.1) * x * x).exp();
            mag * (1.0 * x).sin() / (2.0 * PI)
        };
        let oracle = simpson(integrand, -30.0, 30.0, 30_000);
        assert_relative_eq!(v, oracle, max_relative = 1e-10);
        assert!(matches!(
            u_star_gaussian(&Theta { phi: 0.0, sigma2: 0.05 }, 0.1, 1.0),
            Err(Error::DeconvolutionDomain { .. })
        ));
    }

    #[test]
    fn gradient_deconvolution_is_unbiased() {
        // E[u*_{∇l}(X + ε) | X = x] = ∇l(x), checked by Gauss-Hermite-like quadrature over ε.
        let se2 = 0.1;
        for &x in &[-0.8, 0.4, 1.7] {
            let expect = grad_l_theta(&T0, x);
            let got: Vec<f64> = (0..2)
                .map(|r| {
                    simpson(
                        |e| u_star_grad_gaussian(&T0, se2, x + e).unwrap()[r] * gauss_density(se2, e),
                        -4.0,
                        4.0,
                        4000,
                    )
                })
                .collect();
            assert!((got[0] - expect[0]).abs() < 1e-10 && (got[1] - expect[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn u_star_sv_examples() {
        let beta = 1.0 / (5f64.sqrt() * PI);
        let q = QuadratureConfig::default();
        assert_eq!(u_star_sv(&Theta { phi: 0.0, sigma2: 0.3 }, beta, 1.0, &q).unwrap().re, 0.0);
        let v = u_star_sv(&T0, beta, 1.0, &q).unwrap();
        assert!(v.im.abs() <= 100.0 * q.tol);

        // Second rule: Simpson on the half-line form over a wider window.
        let noise = Noise::LogChiSq { beta };
        let g2 = T0.gamma2();
        let half = |x: f64| {
            let lf = noise.ln_char(x);
            0.7 * g2 * x * (-0.5 * g2 * x * x - lf.re).exp() * (x - lf.im).sin() / PI
        };
        let oracle = simpson(half, 0.0, 14.0, 3001);
        assert_relative_eq!(v.re, oracle, max_relative = 1e-6);

        // The noise is skewed, so u* is not odd and does not vanish at 0.
        let at0 = u_star_sv(&T0, beta, 0.0, &q).unwrap().re;
        let half0 = |x: f64| {
            let lf = noise.ln_char(x);
            0.7 * g2 * x * (-0.5 * g2 * x * x - lf.re).exp() * (-lf.im).sin() / PI
        };
        assert_relative_eq!(at0, simpson(half0, 0.0, 14.0, 3001), max_relative = 1e-6);
        assert!(at0.abs() > 1e-3);

        // Halving the spacing leaves the value unchanged.
        let fine = u_star_sv(&T0, beta, 1.0, &QuadratureConfig { nodes: 2 * q.nodes - 1, ..q }).unwrap();
        assert_relative_eq!(v.re, fine.re, max_relative = 1e-6);
    }

    #[test]
    fn sv_deconvolution_is_unbiased() {
        use crate::model::sample_sv_noise;
        let beta = 0.3;
        let spec = ModelSpec::log_sv(beta).unwrap();
        let mut rng = substream(17, 0);
        let eps: Vec<f64> = (0..200_000).map(|_| sample_sv_noise(beta, &mut rng)).collect();
        let x = 0.6;
        let ys: Vec<f64> = eps.iter().map(|e| x + e).collect();
        let grid = sv_grid(&spec, &ys, &QuadratureConfig::default()).unwrap();
        let vals = grid.eval_many(&[contrast_kernel(&T0)], &ys);
        let mean = vals.iter().map(|v| v[0]).sum::<f64>() / ys.len() as f64;
        let sd = (vals.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        let se = sd / (ys.len() as f64).sqrt();
        assert!((mean - l_theta(&T0, x)).abs() < 3.0 * se, "{mean} vs {} (se {se})", l_theta(&T0, x));
    }

    #[test]
    fn objective_examples() {
        let spec = ModelSpec::gaussian_ar1(0.1).unwrap();
        let zeros = vec![0.0; 20];
        assert_relative_eq!(objective(&spec, &T0, &zeros).unwrap(), l2_norm_sq(&T0), max_relative = 1e-15);
        let z = simulate_ar1(&T0, 0.1, 50, &mut substream(1, 0)).unwrap().z;
        assert_eq!(objective(&spec, &Theta { phi: 0.0, sigma2: 0.4 }, &z).unwrap(), 0.0);
        assert!(objective(&spec, &T0, &[1.0]).is_err());
    }

    #[test]
    fn objective_grid_argmin_near_truth() {
        let spec = ModelSpec::gaussian_ar1(0.1).unwrap();
        let z = simulate_ar1(&T0, 0.1, 10_000, &mut substream(2, 0)).unwrap().z;
        let obj = ContrastObjective::new(spec, &z, QuadratureConfig::default()).unwrap();
        let (dphi, ds) = (0.05, 0.05);
        let mut best = (f64::INFINITY, 0, 0);
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                let th = Theta { phi: 0.7 + i as f64 * dphi, sigma2: 0.3 + j as f64 * ds };
                let v = obj.value(&th).unwrap();
                if v < best.0 {
                    best = (v, i, j);
                }
            }
        }
        assert!(best.1.abs() <= 1 && best.2.abs() <= 1, "{best:?}");
    }

    #[test]
    fn sv_objective_matches_pointwise_quadrature() {
        let beta = 1.0 / (5f64.sqrt() * PI);
        let spec = ModelSpec::log_sv(beta).unwrap();
        let z = crate::model::simulate_sv(&T0, beta, 60, &mut substream(4, 0)).unwrap().trajectory.z;
        let obj = ContrastObjective::new(spec, &z, QuadratureConfig::default()).unwrap();
        for th in [T0, Theta { phi: -0.3, sigma2: 1.2 }, Theta { phi: 0.95, sigma2: 0.05 }] {
            let a = obj.value(&th).unwrap();
            let b = objective_by_quadrature(&th, &Noise::from_spec(&spec), &z, &QuadratureConfig::default()).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{th:?}: {a} vs {b}");
        }
    }

    #[test]
    fn population_contrast_examples() {
        let v = population_contrast_ar1(&T0, &T0);
        assert_relative_eq!(v, -l2_norm_sq(&T0), max_relative = 1e-13);
        assert!((v + 0.05301).abs() < 1e-5);
        assert_eq!(population_contrast_ar1(&Theta { phi: 0.0, sigma2: 0.5 }, &T0), 0.0);
        let h = 1e-5;
        let f = |p: f64, s: f64| population_contrast_ar1(&Theta { phi: p, sigma2: s }, &T0);
        let gphi = (f(0.7 + h, 0.3) - f(0.7 - h, 0.3)) / (2.0 * h);
        let gs = (f(0.7, 0.3 + h) - f(0.7, 0.3 - h)) / (2.0 * h);
        assert!(gphi.abs() < 1e-6 && gs.abs() < 1e-6, "{gphi} {gs}");
    }

    #[test]
    fn population_contrast_minimized_at_truth() {
        let b = ModelSpec::gaussian_ar1(0.1).unwrap().bounds;
        let at_truth = population_contrast_ar1(&T0, &T0);
        for i in 0..25 {
            for j in 0..25 {
                let th = Theta {
                    phi: b.phi_lo + (b.phi_hi - b.phi_lo) * i as f64 / 24.0,
                    sigma2: b.s2_lo + (b.s2_hi - b.s2_lo) * j as f64 / 24.0,
                };
                assert!(population_contrast_ar1(&th, &T0) >= at_truth - 1e-15);
            }
        }
    }

    #[test]
    fn estimate_on_zeros_gives_zero_phi() {
        let spec = ModelSpec::gaussian_ar1(0.1).unwrap();
        let r = estimate(&spec, &vec![0.0; 30]).unwrap();
        assert!(r.theta_hat.phi.abs() < 1e-6, "{:?}", r);
        assert!(r.converged);
    }

    #[test]
    fn estimate_beats_truth_and_is_deterministic() {
        let spec = ModelSpec::gaussian_ar1(0.1).unwrap();
        let z = simulate_ar1(&T0, 0.1, 1000, &mut substream(8, 0)).unwrap().z;
        let a = estimate(&spec, &z).unwrap();
        let b = estimate(&spec, &z).unwrap();
        assert_eq!(a, b);
        assert!(spec.bounds.contains(&a.theta_hat));
        assert!(a.objective_value <= objective(&spec, &T0, &z).unwrap());
        assert_eq!(a.objective_value, objective(&spec, &a.theta_hat, &z).unwrap());
        assert_eq!(a.restarts_used, 9);
    }

    proptest! {
        #[test]
        fn u_star_gaussian_is_odd(phi in -0.95f64..0.95, s2 in 0.2f64..2.5, y in -6.0f64..6.0) {
            let th = Theta { phi, sigma2: s2 };
            let a = u_star_gaussian(&th, 0.1, y).unwrap();
            let b = u_star_gaussian(&th, 0.1, -y).unwrap();
            prop_assert!(a.is_finite());
            prop_assert!((a + b).abs() <= 1e-15 * a.abs().max(1.0));
        }

        #[test]
        fn closed_form_matches_quadrature_objective(
            phi in -0.9f64..0.9,
            s2 in 0.2f64..2.0,
            seed in 0u64..1000,
        ) {
            let th = Theta { phi, sigma2: s2 };
            let z = simulate_ar1(&Theta { phi: 0.5, sigma2: 0.5 }, 0.1, 50, &mut substream(seed, 3)).unwrap().z;
            let spec = ModelSpec::gaussian_ar1(0.1).unwrap();
            let a = objective(&spec, &th, &z).unwrap();
            let b = objective_by_quadrature(&th, &Noise::Gaussian { sigma_eps2: 0.1 }, &z, &QuadratureConfig::default()).unwrap();
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12) + 1e-14, "{} vs {}", a, b);
        }
    }
}

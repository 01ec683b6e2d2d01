//! Fourier deconvolution of odd Gaussian-type kernels against a noise law.
//!
//! For a kernel with transform `v*(t) = i t (c0 + c2 t²) exp(−γ² t²/2)` and
//! noise characteristic function `f*(x) = ρ(x) e^{iα(x)}`, the deconvolved
//! function
//!
//! `u*(y) = (1/2π) ∫ e^{iyx} v*(−x) / f*(x) dx`
//!
//! satisfies `E[u*(X + ε) | X] = v(X)` and reduces to the real integral
//! `(1/π) ∫₀^∞ x (c0 + c2 x²) e^{−γ²x²/2} / ρ(x) · sin(yx − α(x)) dx`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::special::{ln_gamma_complex, log_chisq_mean};

/// Integrands whose exponential factor peaks above `e^27.6 ≈ 1e12` lose all
/// relative precision.
const MAX_LN_PEAK: f64 = 27.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Gaussian { sigma_eps2: f64 },
    /// `β (log ξ² − E[log ξ²])`
    LogChiSq { beta: f64 },
}

impl Noise {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        match spec.kind {
            ModelKind::GaussianAr1 => Noise::Gaussian { sigma_eps2: spec.sigma_eps2 },
            ModelKind::LogSv => Noise::LogChiSq { beta: spec.beta },
        }
    }

    /// `ln f*(y) = ln ρ(y) + i α(y)`.
    pub fn ln_char(&self, y: f64) -> Complex64 {
        match *self {
            Noise::Gaussian { sigma_eps2 } => Complex64::new(-0.5 * sigma_eps2 * y * y, 0.0),
            Noise::LogChiSq { beta } => ln_char_log_chisq(beta, y),
        }
    }

    pub fn char_fn(&self, y: f64) -> Complex64 {
        self.ln_char(y).exp()
    }

    /// Upper bound on `ln(1/|f*(y)|)`.
    fn ln_envelope(&self, y: f64) -> f64 {
        match *self {
            Noise::Gaussian { sigma_eps2 } => 0.5 * sigma_eps2 * y * y,
            Noise::LogChiSq { beta } => 0.5 * 2f64.ln() + 0.5 * PI * beta * y.abs(),
        }
    }

    fn check_kernel(&self, gamma2: f64) -> Result<()> {
        if let Noise::Gaussian { sigma_eps2 } = *self {
            if gamma2 <= sigma_eps2 {
                return Err(Error::DeconvolutionDomain { gamma2, sigma_eps2 });
            }
        }
        Ok(())
    }
}

fn ln_char_log_chisq(beta: f64, y: f64) -> Complex64 {
    let by = beta * y;
    let shift = beta * log_chisq_mean();
    let lg = ln_gamma_complex(Complex64::new(0.5, by));
    Complex64::new(lg.re - 0.5 * PI.ln(), lg.im + by * 2f64.ln() - shift * y)
}

/// Characteristic function of the centered, `β`-scaled log-chi-square noise.
pub fn f_star_eps_sv(beta: f64, y: f64) -> Complex64 {
    ln_char_log_chisq(beta, y).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Half-width of the window; chosen per kernel from `tol` when absent.
    pub truncation: Option<f64>,
    pub nodes: usize,
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { truncation: None, nodes: 2048, tol: 1e-12 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("truncation {t} must be > 0")));
            }
        }
        if self.nodes < 64 {
            return Err(Error::InvalidParameter(format!("nodes {} must be >= 64", self.nodes)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

/// Odd kernel given by its transform `i t (c0 + c2 t²) exp(−γ² t²/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddKernel {
    pub c0: f64,
    pub c2: f64,
    pub gamma2: f64,
}

impl OddKernel {
    fn poly(&self, x: f64) -> f64 {
        self.c0 + self.c2 * x * x
    }

    /// `ln` of the integrand envelope at `x > 0`.
    fn ln_bound(&self, noise: &Noise, x: f64) -> f64 {
        let p = if self.c0 == 0.0 && self.c2 == 0.0 { 1.0 } else { self.c0.abs() + self.c2.abs() * x * x };
        p.ln() + x.ln() - 0.5 * self.gamma2 * x * x + noise.ln_envelope(x)
    }
}

/// Smallest `T` past the envelope peak where the envelope drops below `tol`.
pub fn truncation(kernel: &OddKernel, noise: &Noise, tol: f64) -> Result<f64> {
    noise.check_kernel(kernel.gamma2)?;
    let target = tol.ln();
    let b = |x: f64| kernel.ln_bound(noise, x);
    let mut x = 0.1 / kernel.gamma2.sqrt();
    // Conditioning depends on the exponential factor alone.
    let growth = |x: f64| -0.5 * kernel.gamma2 * x * x + noise.ln_envelope(x);
    let mut peak = growth(x);
    let mut prev = b(x);
    loop {
        let next = x * 1.25;
        let v = b(next);
        peak = peak.max(growth(next));
        if v < target && v < prev {
            // Bisect on the decreasing branch between x and next.
            let (mut lo, mut hi) = (x, next);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if b(mid) < target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if peak > MAX_LN_PEAK {
                return Err(Error::Quadrature(format!(
                    "integrand envelope peaks at e^{peak:.1}; deconvolution is ill-conditioned"
                )));
            }
            return Ok(hi);
        }
        if !next.is_finite() || next > 1e8 {
            return Err(Error::Quadrature("integrand envelope does not decay".into()));
        }
        prev = v;
        x = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadValue {
    pub re: f64,
    /// Residual imaginary part; zero up to rounding for a real target.
    pub im: f64,
}

/// Trapezoid rule on `nodes` symmetric points spanning `[−T, T]`.
pub fn deconvolve(kernel: &OddKernel, noise: &Noise, y: f64, q: &QuadratureConfig) -> Result<QuadValue> {
    q.validate()?;
    noise.check_kernel(kernel.gamma2)?;
    let t = match q.truncation {
        Some(t) => {
            if kernel.ln_bound(noise, t) > q.tol.ln() {
                return Err(Error::Quadrature(format!("tail weight at T = {t} exceeds tol = {:e}", q.tol)));
            }
            t
        }
        None => truncation(kernel, noise, q.tol)?,
    };
    let n = q.nodes;
    let h = 2.0 * t / (n - 1) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let x = -t + j as f64 * h;
        let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
        let lf = noise.ln_char(x);
        // v*(−x) = −i x p(x) e^{−γ²x²/2}
        let mag = x * kernel.poly(x) * (-0.5 * kernel.gamma2 * x * x - lf.re).exp();
        let phase = y * x - lf.im;
        acc += Complex64::new(0.0, -mag) * Complex64::from_polar(1.0, phase) * w;
    }
    acc /= 2.0 * PI;
    if acc.im.abs() > 100.0 * q.tol {
        return Err(Error::Quadrature(format!("imaginary residual {:e} exceeds 100·tol", acc.im)));
    }
    Ok(QuadValue { re: acc.re, im: acc.im })
}

/// Half-line trapezoid grid `x_k = k h`, `k = 1..=K`, with the noise
/// transform tabulated once. Shared by every kernel with `γ²` in a range.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    pub h: f64,
    pub x: Vec<f64>,
    ln_rho: Vec<f64>,
    alpha: Vec<f64>,
}

impl SpectralGrid {
    /// Grid valid for every `γ² ∈ [gamma2_min, gamma2_max]` and `|y| ≤ ymax`.
    pub fn new(noise: &Noise, gamma2_min: f64, gamma2_max: f64, ymax: f64, q: &QuadratureConfig) -> Result<Self> {
        q.validate()?;
        let probe = OddKernel { c0: gamma2_max.max(1.0), c2: gamma2_max.max(1.0).powi(2), gamma2: gamma2_min };
        let t_max = match q.truncation {
            Some(t) => t,
            None => truncation(&probe, noise, q.tol)?,
        };
        // Aliasing: the integrand spectrum sits within √(2γ² ln(1/tol)) of |y|.
        let band = ymax.abs() + (2.0 * gamma2_max * (1.0 / q.tol).ln()).sqrt();
        let h = (2.0 * t_max / (q.nodes - 1) as f64).min(2.0 * PI / band);
        let k = (t_max / h).ceil() as usize;
        let mut x = Vec::with_capacity(k);
        let mut ln_rho = Vec::with_capacity(k);
        let mut alpha = Vec::with_capacity(k);
        for i in 1..=k {
            let xi = i as f64 * h;
            let lf = noise.ln_char(xi);
            x.push(xi);
            ln_rho.push(lf.re);
            alpha.push(lf.im);
        }
        Ok(Self { h, x, ln_rho, alpha })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `h x_k e^{−γ²x_k²/2} / (π ρ_k)`, the kernel-free part of each node weight.
    fn base_weights(&self, gamma2: f64) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.ln_rho)
            .map(|(&x, &lr)| self.h * x * (-0.5 * gamma2 * x * x - lr).exp() / PI)
            .collect()
    }

    /// Evaluates several kernels sharing one `γ²` at each `y`.
    pub fn eval_many(&self, kernels: &[OddKernel], ys: &[f64]) -> Vec<Vec<f64>> {
        let Some(first) = kernels.first() else {
            return vec![Vec::new(); ys.len()];
        };
        debug_assert!(kernels.iter().all(|k| k.gamma2 == first.gamma2));
        let base = self.base_weights(first.gamma2);
        let weights: Vec<Vec<f64>> = kernels
            .iter()
            .map(|k| base.iter().zip(&self.x).map(|(b, &x)| b * k.poly(x)).collect())
            .collect();
        ys.iter()
            .map(|&y| {
                let mut out = vec![0.0; kernels.len()];
                for (k, (&x, &a)) in self.x.iter().zip(&self.alpha).enumerate() {
                    let s = (y * x - a).sin();
                    for (o, w) in out.iter_mut().zip(&weights) {
                        *o += w[k] * s;
                    }
                }
                out
            })
            .collect()
    }

    pub fn eval(&self, kernel: &OddKernel, y: f64) -> f64 {
        self.eval_many(std::slice::from_ref(kernel), &[y])[0][0]
    }
}

/// Precomputed `Σ_i Z_{i+1} e^{i Z_i x_k}` on a spectral grid, so that
/// `Σ_i Z_{i+1} u*(Z_i)` costs one pass over the grid per kernel.
#[derive(Debug, Clone)]
pub struct EmpiricalTransform {
    grid: SpectralGrid,
    /// `Σ_i Z_{i+1} sin(Z_i x_k − α_k)`
    d: Vec<f64>,
}

impl EmpiricalTransform {
    pub fn new(grid: SpectralGrid, z: &[f64]) -> Self {
        let mut s = vec![0.0; grid.len()];
        let mut c = vec![0.0; grid.len()];
        for w in z.windows(2) {
            let (zi, znext) = (w[0], w[1]);
            if znext == 0.0 {
                continue;
            }
            for (k, &x) in grid.x.iter().enumerate() {
                let (sn, cs) = (zi * x).sin_cos();
                s[k] += znext * sn;
                c[k] += znext * cs;
            }
        }
        let d = s
            .iter()
            .zip(&c)
            .zip(&grid.alpha)
            .map(|((s, c), a)| {
                let (sa, ca) = a.sin_cos();
                s * ca - c * sa
            })
            .collect();
        Self { grid, d }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    /// `Σ_i Z_{i+1} u*(Z_i)` over all consecutive pairs.
    pub fn pair_sum(&self, kernel: &OddKernel) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for k in 0..g.len() {
            let x = g.x[k];
            let e = -0.5 * kernel.gamma2 * x * x - g.ln_rho[k];
            if e < -745.0 {
                continue;
            }
            acc += x * kernel.poly(x) * e.exp() * self.d[k];
        }
        acc * g.h / PI
    }
}

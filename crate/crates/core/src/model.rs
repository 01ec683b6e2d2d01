//! Model definitions, the compact parameter box, stationary law and simulation.
//!
//! Both models share the hidden Gaussian AR(1) state
//! `X_{i+1} = φ X_i + η_{i+1}`, `η ~ N(0, σ²)`, observed as `Z_i = X_i + ε_i`.
//! For the Gaussian model `ε ~ N(0, σ_ε²)`; for the log-SV model
//! `ε = β (log ξ² − E[log ξ²])` with standard Gaussian ξ.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_chisq_mean, LOG_CHISQ_VARIANCE};

/// Parameter pair `(φ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub phi: f64,
    pub sigma2: f64,
}

impl Theta {
    pub fn new(phi: f64, sigma2: f64) -> Result<Self> {
        if !(phi.abs() < 1.0) {
            return Err(Error::NonStationary(phi));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 = {sigma2} must be > 0")));
        }
        Ok(Self { phi, sigma2 })
    }

    /// Stationary variance `γ² = σ²/(1−φ²)`; caller guarantees `|φ| < 1`.
    pub fn gamma2(&self) -> f64 {
        self.sigma2 / (1.0 - self.phi * self.phi)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.phi, self.sigma2]
    }

    pub fn from_array(v: [f64; 2]) -> Self {
        Self { phi: v[0], sigma2: v[1] }
    }

    pub fn max_abs_diff(&self, other: &Theta) -> f64 {
        (self.phi - other.phi).abs().max((self.sigma2 - other.sigma2).abs())
    }
}

/// Stationary variance of the hidden chain.
pub fn stationary_variance(theta: &Theta) -> Result<f64> {
    if !(theta.phi.abs() < 1.0) {
        return Err(Error::NonStationary(theta.phi));
    }
    if !(theta.sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 = {} must be > 0", theta.sigma2)));
    }
    Ok(theta.gamma2())
}

/// Compact box `[phi_lo, phi_hi] × [s2_lo, s2_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub s2_lo: f64,
    pub s2_hi: f64,
}

impl ParamBox {
    pub fn new(phi_lo: f64, phi_hi: f64, s2_lo: f64, s2_hi: f64) -> Result<Self> {
        let b = Self { phi_lo, phi_hi, s2_lo, s2_hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0 < self.phi_lo && self.phi_lo <= self.phi_hi && self.phi_hi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "phi bounds [{}, {}] must satisfy -1 < lo <= hi < 1",
                self.phi_lo, self.phi_hi
            )));
        }
        if !(0.0 < self.s2_lo && self.s2_lo <= self.s2_hi) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 bounds [{}, {}] must satisfy 0 < lo <= hi",
                self.s2_lo, self.s2_hi
            )));
        }
        Ok(())
    }

    /// Default AR(1) box; keeps `γ² − σ_ε² >= 0.05` everywhere.
    pub fn default_ar1(sigma_eps2: f64) -> Self {
        Self { phi_lo: -0.99, phi_hi: 0.99, s2_lo: sigma_eps2 + 0.05, s2_hi: 3.0 }
    }

    pub fn default_sv() -> Self {
        Self { phi_lo: -0.99, phi_hi: 0.99, s2_lo: 0.01, s2_hi: 3.0 }
    }

    pub fn contains(&self, theta: &Theta) -> bool {
        (self.phi_lo..=self.phi_hi).contains(&theta.phi)
            && (self.s2_lo..=self.s2_hi).contains(&theta.sigma2)
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.phi_lo, self.s2_lo]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.phi_hi, self.s2_hi]
    }

    /// Smallest and largest stationary variance attained on the box.
    pub fn gamma2_range(&self) -> (f64, f64) {
        let phi_min_abs = if self.phi_lo <= 0.0 && self.phi_hi >= 0.0 {
            0.0
        } else {
            self.phi_lo.abs().min(self.phi_hi.abs())
        };
        let phi_max_abs = self.phi_lo.abs().max(self.phi_hi.abs());
        (
            self.s2_lo / (1.0 - phi_min_abs * phi_min_abs),
            self.s2_hi / (1.0 - phi_max_abs * phi_max_abs),
        )
    }
}

/// Componentwise clamp into the box.
pub fn project_into_box(raw: [f64; 2], b: &ParamBox) -> Theta {
    Theta {
        phi: raw[0].clamp(b.phi_lo, b.phi_hi),
        sigma2: raw[1].clamp(b.s2_lo, b.s2_hi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    GaussianAr1,
    LogSv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Known measurement-noise variance.
    pub sigma_eps2: f64,
    /// Exponent scale of the SV innovation; 1.0 for the Gaussian model.
    pub beta: f64,
    pub bounds: ParamBox,
}

impl ModelSpec {
    pub fn gaussian_ar1(sigma_eps2: f64) -> Result<Self> {
        if !(sigma_eps2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_eps2 = {sigma_eps2} must be > 0")));
        }
        Ok(Self {
            kind: ModelKind::GaussianAr1,
            sigma_eps2,
            beta: 1.0,
            bounds: ParamBox::default_ar1(sigma_eps2),
        })
    }

    /// Log-SV model with `σ_ε² = β² π²/2`.
    pub fn log_sv(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta = {beta} must be > 0")));
        }
        Ok(Self {
            kind: ModelKind::LogSv,
            sigma_eps2: sv_noise_variance(beta),
            beta,
            bounds: ParamBox::default_sv(),
        })
    }

    /// SV model whose noise variance equals `sigma_eps2`.
    pub fn log_sv_with_variance(sigma_eps2: f64) -> Result<Self> {
        Self::log_sv(sv_beta_for_variance(sigma_eps2))
    }

    pub fn with_bounds(mut self, bounds: ParamBox) -> Result<Self> {
        bounds.validate()?;
        if self.kind == ModelKind::GaussianAr1 && bounds.s2_lo <= self.sigma_eps2 {
            return Err(Error::InvalidParameter(format!(
                "AR(1) box needs s2_lo > sigma_eps2 ({} <= {})",
                bounds.s2_lo, self.sigma_eps2
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }
}

pub fn sv_noise_variance(beta: f64) -> f64 {
    beta * beta * LOG_CHISQ_VARIANCE
}

/// `β` such that `β² π²/2 = sigma_eps2`; `1/(√5 π)` for 0.1.
pub fn sv_beta_for_variance(sigma_eps2: f64) -> f64 {
    (sigma_eps2 / LOG_CHISQ_VARIANCE).sqrt()
}

/// Hidden path (possibly empty for real data) and observations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn observed(z: Vec<f64>) -> Self {
        Self { x: Vec::new(), z }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        if self.x.is_empty() {
            wr.write_record(["z"])?;
            for z in &self.z {
                wr.write_record([format!("{z:e}")])?;
            }
        } else {
            wr.write_record(["x", "z"])?;
            for (x, z) in self.x.iter().zip(&self.z) {
                wr.write_record([format!("{x:e}"), format!("{z:e}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `x,z` or single-column CSV; the header row is required.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers()?.clone();
        let x_col = headers.iter().position(|h| h.eq_ignore_ascii_case("x"));
        let z_col = match headers.iter().position(|h| h.eq_ignore_ascii_case("z")) {
            Some(c) => c,
            None if headers.len() == 1 => 0,
            None => return Err(Error::Parse("missing `z` column".into())),
        };
        let mut t = Trajectory::default();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let s = rec.get(c).ok_or_else(|| Error::Parse(format!("row {}: missing column", line + 2)))?;
                let v: f64 = s.parse().map_err(|_| Error::Parse(format!("row {}: bad number `{s}`", line + 2)))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("row {}: non-finite value", line + 2)));
                }
                Ok(v)
            };
            t.z.push(parse(z_col)?);
            if let Some(xc) = x_col {
                t.x.push(parse(xc)?);
            }
        }
        Ok(t)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn check_sim_args(theta: &Theta, n: usize) -> Result<()> {
    Theta::new(theta.phi, theta.sigma2)?;
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    Ok(())
}

/// Stationary hidden path of length `n`.
pub fn simulate_state<R: Rng + ?Sized>(theta: &Theta, n: usize, rng: &mut R) -> Vec<f64> {
    let sd = theta.sigma2.sqrt();
    let mut x = Vec::with_capacity(n);
    let mut cur = theta.gamma2().sqrt() * rng.sample::<f64, _>(StandardNormal);
    for i in 0..n {
        if i > 0 {
            cur = theta.phi * cur + sd * rng.sample::<f64, _>(StandardNormal);
        }
        x.push(cur);
    }
    x
}

/// Gaussian AR(1) observed with additive `N(0, sigma_eps2)` noise.
/// `sigma_eps2 = 0` gives noiseless observations.
pub fn simulate_ar1<R: Rng + ?Sized>(theta: &Theta, sigma_eps2: f64, n: usize, rng: &mut R) -> Result<Trajectory> {
    check_sim_args(theta, n)?;
    if !(sigma_eps2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_eps2 = {sigma_eps2} must be >= 0")));
    }
    let x = simulate_state(theta, n, rng);
    let se = sigma_eps2.sqrt();
    let z = x.iter().map(|&xi| xi + se * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Trajectory { x, z })
}

/// Raw SV returns together with the log-transformed observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SvSample {
    pub y: Vec<f64>,
    pub trajectory: Trajectory,
}

/// `Y_i = exp(X_i/2) sign(ξ_i) |ξ_i|^β`, `Z_i = log Y_i² − β E[log ξ²]`.
pub fn simulate_sv<R: Rng + ?Sized>(theta: &Theta, beta: f64, n: usize, rng: &mut R) -> Result<SvSample> {
    check_sim_args(theta, n)?;
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must be > 0")));
    }
    let x = simulate_state(theta, n, rng);
    let shift = beta * log_chisq_mean();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for &xi in &x {
        let xi_noise: f64 = rng.sample(StandardNormal);
        let yi = (xi / 2.0).exp() * xi_noise.signum() * xi_noise.abs().powf(beta);
        y.push(yi);
        // log Y² = X + β log ξ², computed without the round trip through Y.
        z.push(xi + beta * (xi_noise * xi_noise).ln() - shift);
    }
    Ok(SvSample { y, trajectory: Trajectory { x, z } })
}

/// Centered log-chi-square noise `β (log ξ² − E[log ξ²])`.
pub fn sample_sv_noise<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let xi: f64 = rng.sample(StandardNormal);
    beta * ((xi * xi).ln() - log_chisq_mean())
}

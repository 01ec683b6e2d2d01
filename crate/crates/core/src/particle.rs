//! Sequential Monte Carlo on the augmented state `(X_i, θ_i)`: bootstrap
//! filter, auxiliary particle filter and the kernel-smoothing APF.
//!
//! Bootstrap and APF let the parameters drift as `θ_{i+1} = θ_i + G_{i+1}`,
//! `G ~ N(0, Q)`. The kernel-smoothing variant replaces the drift by
//! shrinkage toward the weighted mean plus a Gaussian kernel jitter.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, ParamBox, Theta};
use crate::special::log_chisq_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Multinomial,
    #[default]
    Systematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    Bootstrap,
    Apf,
    Ksapf,
}

/// Uniform prior ranges for `θ₁`. Equal endpoints pin the coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub phi: (f64, f64),
    pub sigma2: (f64, f64),
}

impl Default for PriorBox {
    fn default() -> Self {
        Self { phi: (0.5, 0.9), sigma2: (0.1, 0.4) }
    }
}

impl PriorBox {
    pub fn point(theta: &Theta) -> Self {
        Self { phi: (theta.phi, theta.phi), sigma2: (theta.sigma2, theta.sigma2) }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.phi;
        let (c, d) = self.sigma2;
        if !(a <= b && a > -1.0 && b < 1.0 && c <= d && c > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid prior box {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub particles: usize,
    /// Covariance of the parameter random walk.
    pub q: [[f64; 2]; 2],
    /// Kernel width of the kernel-smoothing filter.
    pub h: f64,
    pub prior: PriorBox,
    pub resampling: Resampling,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 5000,
            q: [[0.6e-6, 0.0], [0.0, 0.1e-6]],
            h: 0.1,
            prior: PriorBox::default(),
            resampling: Resampling::Systematic,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 1 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::InvalidParameter(format!("h = {} must lie in (0, 1)", self.h)));
        }
        chol2(&self.q)?;
        self.prior.validate()
    }
}

/// Lower Cholesky factor of a 2×2 PSD matrix; zero pivots are allowed.
fn chol2(m: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let sym_err = (m[0][1] - m[1][0]).abs();
    if sym_err > 1e-12 * (m[0][0].abs() + m[1][1].abs()).max(1e-300) || m[0][0] < 0.0 {
        return Err(Error::NotPsd(m[0][0].min(-sym_err)));
    }
    let l11 = m[0][0].sqrt();
    let l21 = if l11 > 0.0 { m[1][0] / l11 } else { 0.0 };
    let rem = m[1][1] - l21 * l21;
    if rem < -1e-12 * m[1][1].abs().max(1e-300) {
        return Err(Error::NotPsd(rem));
    }
    if l11 == 0.0 && m[1][0] != 0.0 {
        return Err(Error::NotPsd(0.0));
    }
    Ok([[l11, 0.0], [l21, rem.max(0.0).sqrt()]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub x: Vec<f64>,
    pub theta: Vec<Theta>,
    pub w: Vec<f64>,
    pub ess: f64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn theta_mean(&self) -> Theta {
        let mut m = [0.0; 2];
        for (t, w) in self.theta.iter().zip(&self.w) {
            m[0] += w * t.phi;
            m[1] += w * t.sigma2;
        }
        Theta::from_array(m)
    }

    pub fn state_mean(&self) -> f64 {
        self.x.iter().zip(&self.w).map(|(x, w)| x * w).sum()
    }

    fn theta_cov(&self, mean: &Theta) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for (t, w) in self.theta.iter().zip(&self.w) {
            let d = [t.phi - mean.phi, t.sigma2 - mean.sigma2];
            for r in 0..2 {
                for k in 0..2 {
                    c[r][k] += w * d[r] * d[k];
                }
            }
        }
        c
    }

    fn select(&mut self, idx: &[usize]) {
        self.x = idx.iter().map(|&i| self.x[i]).collect();
        self.theta = idx.iter().map(|&i| self.theta[i]).collect();
        let m = idx.len() as f64;
        self.w = vec![1.0 / m; idx.len()];
        self.ess = m;
    }
}

/// Summary of one filter step, taken before any resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub filtered_mean: f64,
    pub theta_mean: Theta,
    pub ess: f64,
    pub resampled: bool,
}

/// `ln p(z | x)` for the model's observation law.
pub fn obs_log_density(model: &ModelSpec, z: f64, x: f64) -> f64 {
    match model.kind {
        ModelKind::GaussianAr1 => {
            let d = z - x;
            -0.5 * (2.0 * PI * model.sigma_eps2).ln() - d * d / (2.0 * model.sigma_eps2)
        }
        ModelKind::LogSv => {
            // log ξ² has density exp((l − e^l)/2)/√(2π).
            let l = (z - x) / model.beta + log_chisq_mean();
            -model.beta.ln() - 0.5 * (2.0 * PI).ln() + 0.5 * (l - l.exp())
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let mut v = v;
    for _ in 0..64 {
        if v > hi {
            v = 2.0 * hi - v;
        } else if v < lo {
            v = 2.0 * lo - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

/// Reflects φ into the model's φ range and σ² into `(0, s2_hi]`.
fn reflect_theta(t: [f64; 2], bounds: &ParamBox) -> Theta {
    let phi = reflect(t[0], bounds.phi_lo, bounds.phi_hi);
    let s2 = reflect(t[1], 0.0, bounds.s2_hi).max(1e-10);
    Theta { phi, sigma2: s2 }
}

fn gaussian2<R: Rng + ?Sized>(l: &[[f64; 2]; 2], rng: &mut R) -> [f64; 2] {
    let (a, b) = (normal(rng), normal(rng));
    [l[0][0] * a, l[1][0] * a + l[1][1] * b]
}

/// Normalizes log-weights in place into `w`; returns the ESS.
fn normalize(logw: &[f64], w: &mut Vec<f64>) -> f64 {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    w.clear();
    if !max.is_finite() {
        log::warn!("particle weights collapsed; resetting to uniform");
        let m = logw.len() as f64;
        w.extend(std::iter::repeat_n(1.0 / m, logw.len()));
        return m;
    }
    w.extend(logw.iter().map(|l| (l - max).exp()));
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    ess(w)
}

pub fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Draws `w.len()` ancestor indices.
pub fn resample<R: Rng + ?Sized>(w: &[f64], scheme: Resampling, rng: &mut R) -> Vec<usize> {
    let m = w.len();
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for v in w {
        acc += v;
        cdf.push(acc);
    }
    let total = acc;
    let pick = |u: f64| cdf.partition_point(|&c| c <= u * total).min(m - 1);
    match scheme {
        Resampling::Multinomial => (0..m).map(|_| pick(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / m as f64;
            let mut out = Vec::with_capacity(m);
            let mut j = 0;
            for i in 0..m {
                let u = (u0 + i as f64 / m as f64) * total;
                while j < m - 1 && cdf[j] <= u {
                    j += 1;
                }
                out.push(j);
            }
            out
        }
    }
}

fn uniform<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

/// Parameters from the prior, states from the stationary law of each particle.
pub fn init_cloud<R: Rng + ?Sized>(config: &FilterConfig, rng: &mut R) -> Result<ParticleCloud> {
    config.validate()?;
    let m = config.particles;
    let mut theta = Vec::with_capacity(m);
    let mut x = Vec::with_capacity(m);
    for _ in 0..m {
        let t = Theta { phi: uniform(config.prior.phi, rng), sigma2: uniform(config.prior.sigma2, rng) };
        x.push(t.gamma2().sqrt() * normal(rng));
        theta.push(t);
    }
    Ok(ParticleCloud { x, theta, w: vec![1.0 / m as f64; m], ess: m as f64 })
}

fn check_cloud(cloud: &ParticleCloud) -> Result<()> {
    if cloud.is_empty() || cloud.theta.len() != cloud.len() || cloud.w.len() != cloud.len() {
        return Err(Error::InvalidParameter("malformed particle cloud".into()));
    }
    Ok(())
}

fn finish(cloud: &mut ParticleCloud, logw: &[f64], config: &FilterConfig, always_resample: bool, rng: &mut (impl Rng + ?Sized)) -> StepInfo {
    cloud.ess = normalize(logw, &mut cloud.w);
    let info_mean = cloud.state_mean();
    let theta_mean = cloud.theta_mean();
    let ess = cloud.ess;
    let m = cloud.len() as f64;
    let resampled = !always_resample && ess < m / 2.0;
    if resampled {
        let idx = resample(&cloud.w, config.resampling, rng);
        cloud.select(&idx);
    }
    StepInfo { filtered_mean: info_mean, theta_mean, ess, resampled }
}

/// Reweights the current cloud by `p(z | x)` without moving it.
pub fn reweight<R: Rng + ?Sized>(cloud: &mut ParticleCloud, z: f64, model: &ModelSpec, config: &FilterConfig, rng: &mut R) -> Result<StepInfo> {
    check_cloud(cloud)?;
    let logw: Vec<f64> = cloud.x.iter().zip(&cloud.w).map(|(&x, &w)| w.ln() + obs_log_density(model, z, x)).collect();
    Ok(finish(cloud, &logw, config, false, rng))
}

pub fn bootstrap_step<R: Rng + ?Sized>(cloud: &mut ParticleCloud, z: f64, model: &ModelSpec, config: &FilterConfig, rng: &mut R) -> Result<StepInfo> {
    check_cloud(cloud)?;
    let l = chol2(&config.q)?;
    let mut logw = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let g = gaussian2(&l, rng);
        let t = cloud.theta[i];
        let t = reflect_theta([t.phi + g[0], t.sigma2 + g[1]], &model.bounds);
        let x = t.phi * cloud.x[i] + t.sigma2.sqrt() * normal(rng);
        cloud.theta[i] = t;
        cloud.x[i] = x;
        logw.push(cloud.w[i].ln() + obs_log_density(model, z, x));
    }
    Ok(finish(cloud, &logw, config, false, rng))
}

/// Two-stage step shared by the auxiliary filters. `centre[i]` is the
/// parameter at which particle `i` is looked ahead, `draw` moves a selected
/// ancestor's parameter.
fn auxiliary_step<R: Rng + ?Sized>(
    cloud: &mut ParticleCloud,
    z: f64,
    model: &ModelSpec,
    config: &FilterConfig,
    centre: &[Theta],
    mut draw: impl FnMut(usize, &mut R) -> Theta,
    rng: &mut R,
) -> Result<StepInfo> {
    let m = cloud.len();
    let mu: Vec<f64> = (0..m).map(|i| centre[i].phi * cloud.x[i]).collect();
    let first: Vec<f64> = (0..m).map(|i| cloud.w[i].ln() + obs_log_density(model, z, mu[i])).collect();
    let mut lam = Vec::with_capacity(m);
    normalize(&first, &mut lam);
    let idx = resample(&lam, config.resampling, rng);
    let mut x = Vec::with_capacity(m);
    let mut theta = Vec::with_capacity(m);
    let mut logw = Vec::with_capacity(m);
    for &k in &idx {
        let t = draw(k, rng);
        let xn = t.phi * cloud.x[k] + t.sigma2.sqrt() * normal(rng);
        logw.push(obs_log_density(model, z, xn) - obs_log_density(model, z, mu[k]));
        x.push(xn);
        theta.push(t);
    }
    cloud.x = x;
    cloud.theta = theta;
    let mut info = finish(cloud, &logw, config, true, rng);
    info.resampled = true;
    Ok(info)
}

pub fn apf_step<R: Rng + ?Sized>(cloud: &mut ParticleCloud, z: f64, model: &ModelSpec, config: &FilterConfig, rng: &mut R) -> Result<StepInfo> {
    check_cloud(cloud)?;
    let l = chol2(&config.q)?;
    let centre = cloud.theta.clone();
    let bounds = model.bounds;
    auxiliary_step(
        cloud,
        z,
        model,
        config,
        &centre,
        |k, rng| {
            let g = gaussian2(&l, rng);
            reflect_theta([centre[k].phi + g[0], centre[k].sigma2 + g[1]], &bounds)
        },
        rng,
    )
}

/// Shrinks each parameter particle toward the weighted mean with
/// `a = √(1 − h²)`; the weighted mean is unchanged.
pub fn shrink_parameters(cloud: &ParticleCloud, h: f64) -> Vec<Theta> {
    let a = (1.0 - h * h).sqrt();
    let mean = cloud.theta_mean();
    cloud
        .theta
        .iter()
        .map(|t| Theta { phi: a * t.phi + (1.0 - a) * mean.phi, sigma2: a * t.sigma2 + (1.0 - a) * mean.sigma2 })
        .collect()
}

pub fn ksapf_step<R: Rng + ?Sized>(cloud: &mut ParticleCloud, z: f64, model: &ModelSpec, config: &FilterConfig, rng: &mut R) -> Result<StepInfo> {
    check_cloud(cloud)?;
    let mean = cloud.theta_mean();
    let cov = cloud.theta_cov(&mean);
    let h2 = config.h * config.h;
    let kernel = [[h2 * cov[0][0], h2 * cov[0][1]], [h2 * cov[1][0], h2 * cov[1][1]]];
    // Rounding can leave a weighted covariance marginally indefinite.
    let l = chol2(&kernel).or_else(|_| chol2(&[[kernel[0][0].max(0.0), 0.0], [0.0, kernel[1][1].max(0.0)]]))?;
    let centre = shrink_parameters(cloud, config.h);
    let bounds = model.bounds;
    let c2 = centre.clone();
    auxiliary_step(
        cloud,
        z,
        model,
        config,
        &centre,
        |k, rng| {
            let g = gaussian2(&l, rng);
            reflect_theta([c2[k].phi + g[0], c2[k].sigma2 + g[1]], &bounds)
        },
        rng,
    )
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterDiagnostics {
    pub ess: Vec<f64>,
    pub resampled: Vec<bool>,
    pub filtered_mean: Vec<f64>,
    pub theta_mean: Vec<Theta>,
}

impl FilterDiagnostics {
    pub fn resample_count(&self) -> usize {
        self.resampled.iter().filter(|r| **r).count()
    }

    fn push(&mut self, s: StepInfo) {
        self.ess.push(s.ess);
        self.resampled.push(s.resampled);
        self.filtered_mean.push(s.filtered_mean);
        self.theta_mean.push(s.theta_mean);
    }

    /// Writes `step,ess,resampled,filtered_mean,phi_mean,sigma2_mean`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "ess", "resampled", "filtered_mean", "phi_mean", "sigma2_mean"])?;
        for i in 0..self.ess.len() {
            wr.write_record([
                (i + 1).to_string(),
                self.ess[i].to_string(),
                (self.resampled[i] as u8).to_string(),
                self.filtered_mean[i].to_string(),
                self.theta_mean[i].phi.to_string(),
                self.theta_mean[i].sigma2.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs a filter over `z` and returns the final weighted mean of the
/// parameter particles as the point estimate.
pub fn run_filter<R: Rng + ?Sized>(
    method: FilterMethod,
    z: &[f64],
    model: &ModelSpec,
    config: &FilterConfig,
    rng: &mut R,
) -> Result<(Theta, FilterDiagnostics)> {
    if z.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut cloud = init_cloud(config, rng)?;
    let mut diag = FilterDiagnostics::default();
    diag.push(reweight(&mut cloud, z[0], model, config, rng)?);
    for &zi in &z[1..] {
        let info = match method {
            FilterMethod::Bootstrap => bootstrap_step(&mut cloud, zi, model, config, rng)?,
            FilterMethod::Apf => apf_step(&mut cloud, zi, model, config, rng)?,
            FilterMethod::Ksapf => ksapf_step(&mut cloud, zi, model, config, rng)?,
        };
        diag.push(info);
    }
    Ok((cloud.theta_mean(), diag))
}

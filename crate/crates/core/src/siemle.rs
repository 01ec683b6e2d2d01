//! Simulated EM for the log-SV model.
//!
//! The log-χ² noise is replaced by a seven-component normal mixture with
//! latent indicators `s_i`. Given the indicators the model is linear
//! Gaussian, so a Gibbs sampler alternates indicator draws with
//! forward-filter backward-sampling of the states, and the M-step maximizes
//! the average offset-Kalman log-likelihood over the retained draws.

use std::io::Read;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contrast::MinimizeResult;
use crate::error::{Error, Result};
use crate::kalman::kalman_filter_offsets;
use crate::model::{project_into_box, ModelSpec, Theta};
use crate::optim::{nelder_mead, NelderMeadConfig};

const KSC_CSV: &str = include_str!("../data/ksc_mixture.csv");

/// Normal mixture `Σ q_j N(m_j, v2_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureApprox {
    pub q: Vec<f64>,
    pub m: Vec<f64>,
    pub v2: Vec<f64>,
}

#[derive(Deserialize)]
struct MixtureRow {
    q: f64,
    m: f64,
    v2: f64,
}

impl MixtureApprox {
    pub fn new(q: Vec<f64>, m: Vec<f64>, v2: Vec<f64>) -> Result<Self> {
        let mix = Self { q, m, v2 };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.q.len();
        if k == 0 || self.m.len() != k || self.v2.len() != k {
            return Err(Error::InvalidParameter("mixture needs equal-length, nonempty q, m, v2".into()));
        }
        if self.q.iter().any(|&q| !(q > 0.0)) || self.v2.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights and variances must be positive".into()));
        }
        let s: f64 = self.q.iter().sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {s}")));
        }
        Ok(())
    }

    /// Reads `q,m,v2` rows; lines starting with `#` are comments.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
        let mut mix = Self { q: vec![], m: vec![], v2: vec![] };
        for row in rd.deserialize::<MixtureRow>() {
            let row = row?;
            mix.q.push(row.q);
            mix.m.push(row.m);
            mix.v2.push(row.v2);
        }
        // Published weights are rounded; renormalize.
        mix.validate()?;
        let s: f64 = mix.q.iter().sum();
        mix.q.iter_mut().for_each(|q| *q /= s);
        Ok(mix)
    }

    /// The seven-component approximation of the centred log χ²₁ law.
    pub fn ksc() -> Self {
        Self::from_csv(KSC_CSV.as_bytes()).expect("bundled mixture table is valid")
    }

    /// A single Gaussian component; reduces the sampler to plain Kalman QML.
    pub fn single(sigma_eps2: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![0.0], vec![sigma_eps2])
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.q.iter().zip(&self.m).map(|(q, m)| q * m).sum()
    }

    /// Mixture for `β(U − E U)` given the mixture for `U`.
    pub fn centred_scaled(&self, beta: f64) -> Self {
        let mu = self.mean();
        Self {
            q: self.q.clone(),
            m: self.m.iter().map(|m| beta * (m - mu)).collect(),
            v2: self.v2.iter().map(|v| beta * beta * v).collect(),
        }
    }
}

/// Posterior indicator probabilities at one position.
pub fn indicator_posterior(z: f64, x: f64, mix: &MixtureApprox) -> Vec<f64> {
    let logp: Vec<f64> = (0..mix.len())
        .map(|j| {
            let d = z - x - mix.m[j];
            mix.q[j].ln() - 0.5 * mix.v2[j].ln() - d * d / (2.0 * mix.v2[j])
        })
        .collect();
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn sample_indicators<R: Rng + ?Sized>(z: &[f64], x: &[f64], mix: &MixtureApprox, rng: &mut R) -> Result<Vec<usize>> {
    if z.len() != x.len() {
        return Err(Error::InvalidParameter("z and x lengths differ".into()));
    }
    Ok(z.iter()
        .zip(x)
        .map(|(&zi, &xi)| {
            let p = indicator_posterior(zi, xi, mix);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    return j;
                }
            }
            p.len() - 1
        })
        .collect())
}

fn offsets_for(s: &[usize], mix: &MixtureApprox) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(&bad) = s.iter().find(|&&j| j >= mix.len()) {
        return Err(Error::InvalidParameter(format!("indicator {bad} out of range")));
    }
    Ok((s.iter().map(|&j| mix.m[j]).collect(), s.iter().map(|&j| mix.v2[j]).collect()))
}

/// Exact draw of `X_{1:n}` given `Z_{1:n}` and the indicators.
pub fn sample_states_ffbs<R: Rng + ?Sized>(theta: &Theta, z: &[f64], s: &[usize], mix: &MixtureApprox, rng: &mut R) -> Result<Vec<f64>> {
    if s.len() != z.len() {
        return Err(Error::InvalidParameter("indicator and observation lengths differ".into()));
    }
    let (m, v) = offsets_for(s, mix)?;
    let run = kalman_filter_offsets(theta, z, &m, &v)?;
    let n = z.len();
    let mut x = vec![0.0; n];
    let mut nrm = || rng.sample::<f64, _>(StandardNormal);
    x[n - 1] = run.x_filt[n - 1] + run.p_filt[n - 1].sqrt() * nrm();
    for t in (0..n - 1).rev() {
        let (xf, pf) = (run.x_filt[t], run.p_filt[t]);
        let j = pf * theta.phi / run.p_pred[t + 1];
        let mean = xf + j * (x[t + 1] - theta.phi * xf);
        let var = (pf - j * theta.phi * pf).max(0.0);
        x[t] = mean + var.sqrt() * nrm();
    }
    Ok(x)
}

/// `(1/M̃) Σ_l log f_θ(Z | s^l)`.
pub fn q_tilde(theta: &Theta, z: &[f64], draws: &[Vec<usize>], mix: &MixtureApprox) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut acc = 0.0;
    for s in draws {
        let (m, v) = offsets_for(s, mix)?;
        acc += kalman_filter_offsets(theta, z, &m, &v)?.loglik;
    }
    Ok(acc / draws.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiemleConfig {
    /// Retained Gibbs draws per EM iteration.
    pub m_tilde: usize,
    /// Stop when successive iterates differ by at most this in max-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of each Gibbs run discarded as burn-in.
    pub burn_in: f64,
    pub optimizer: NelderMeadConfig,
}

impl Default for SiemleConfig {
    fn default() -> Self {
        Self { m_tilde: 100, tol: 1e-4, max_iter: 50, burn_in: 0.2, optimizer: NelderMeadConfig::default() }
    }
}

impl SiemleConfig {
    fn sweeps(&self) -> usize {
        (self.m_tilde as f64 / (1.0 - self.burn_in)).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub theta_k: Theta,
    pub indicator_draws: Vec<Vec<usize>>,
    pub q_tilde: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiemleOutcome {
    pub result: MinimizeResult,
    pub iterations: usize,
    pub path: Vec<Theta>,
}

/// Starting value from the sample autocovariances at lags 1 and 2.
pub fn moment_start(model: &ModelSpec, z: &[f64]) -> Theta {
    let b = &model.bounds;
    let centre = [(b.phi_lo + b.phi_hi) / 2.0, (b.s2_lo + b.s2_hi) / 2.0];
    let n = z.len();
    if n < 4 {
        return project_into_box(centre, b);
    }
    let mean = z.iter().sum::<f64>() / n as f64;
    let acov = |k: usize| (0..n - k).map(|i| (z[i] - mean) * (z[i + k] - mean)).sum::<f64>() / n as f64;
    let (c1, c2) = (acov(1), acov(2));
    if !(c1.abs() > 1e-12) {
        return project_into_box(centre, b);
    }
    let phi = (c2 / c1).clamp(b.phi_lo, b.phi_hi);
    let g2 = if phi.abs() > 1e-6 { (c1 / phi).abs() } else { (acov(0) - model.sigma_eps2).max(b.s2_lo) };
    project_into_box([phi, g2 * (1.0 - phi * phi)], b)
}

/// One Gibbs run of `sweeps` sweeps from the state path `x`, keeping the
/// indicators of the last `m_tilde` sweeps.
fn gibbs<R: Rng + ?Sized>(
    theta: &Theta,
    z: &[f64],
    x: &mut Vec<f64>,
    mix: &MixtureApprox,
    cfg: &SiemleConfig,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let sweeps = cfg.sweeps();
    let burn = sweeps - cfg.m_tilde;
    let mut kept = Vec::with_capacity(cfg.m_tilde);
    for sweep in 0..sweeps {
        let s = sample_indicators(z, x, mix, rng)?;
        *x = sample_states_ffbs(theta, z, &s, mix, rng)?;
        if sweep >= burn {
            kept.push(s);
        }
    }
    Ok(kept)
}

/// M-step: Nelder-Mead from `theta_k` on the fixed draws.
pub fn m_step(model: &ModelSpec, z: &[f64], state: &EmState, mix: &MixtureApprox, nm: &NelderMeadConfig) -> (Theta, f64, bool) {
    let out = nelder_mead(
        |p| match q_tilde(&Theta::from_array(p), z, &state.indicator_draws, mix) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        },
        state.theta_k.as_array(),
        &model.bounds,
        nm,
    );
    (Theta::from_array(out.x), -out.f, out.converged)
}

pub fn siemle_estimate<R: Rng + ?Sized>(model: &ModelSpec, z: &[f64], cfg: &SiemleConfig, rng: &mut R) -> Result<SiemleOutcome> {
    let mix = MixtureApprox::ksc().centred_scaled(model.beta);
    siemle_estimate_with(model, z, &mix, cfg, rng)
}

pub fn siemle_estimate_with<R: Rng + ?Sized>(
    model: &ModelSpec,
    z: &[f64],
    mix: &MixtureApprox,
    cfg: &SiemleConfig,
    rng: &mut R,
) -> Result<SiemleOutcome> {
    if z.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: z.len() });
    }
    if cfg.m_tilde < 1 || !(0.0..1.0).contains(&cfg.burn_in) || cfg.max_iter < 1 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid simulated-EM settings {cfg:?}")));
    }
    mix.validate()?;
    let mut theta = moment_start(model, z);
    let mut x = z.to_vec();
    let mut path = vec![theta];
    let mut converged = false;
    let mut value = f64::NAN;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let draws = gibbs(&theta, z, &mut x, mix, cfg, rng)?;
        let q_k = q_tilde(&theta, z, &draws, mix)?;
        let state = EmState { theta_k: theta, indicator_draws: draws, q_tilde: q_k, iteration: iterations };
        let (next, q_next, _) = m_step(model, z, &state, mix, &cfg.optimizer);
        log::debug!("simulated EM iteration {iterations}: {next:?}, Q = {q_next}");
        let step = next.max_abs_diff(&theta);
        theta = next;
        value = q_next;
        path.push(theta);
        if step <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::info!("simulated EM stopped after {iterations} iterations without meeting tol {}", cfg.tol);
    }
    Ok(SiemleOutcome {
        result: MinimizeResult { theta_hat: theta, objective_value: -value, restarts_used: 1, converged },
        iterations,
        path,
    })
}

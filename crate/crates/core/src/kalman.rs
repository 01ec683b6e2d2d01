//! Kalman filter for the linear-Gaussian AR(1) state-space model and the
//! quasi-maximum-likelihood estimator built on its prediction-error
//! decomposition.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::contrast::MinimizeResult;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta};
use crate::optim::{multistart, NelderMeadConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KalmanRun {
    /// One-step prediction errors `ν_i`.
    pub nu: Vec<f64>,
    /// Prediction-error variances `F_i`.
    pub f: Vec<f64>,
    /// One-step state predictions `x̂_i⁻`.
    pub x_pred: Vec<f64>,
    pub p_pred: Vec<f64>,
    /// Filtered means `E[X_i | Z_{1:i}]`.
    pub x_filt: Vec<f64>,
    pub p_filt: Vec<f64>,
    pub loglik: f64,
}

#[derive(Serialize)]
struct InnovationRow {
    i: usize,
    nu: f64,
    #[serde(rename = "F")]
    f: f64,
}

impl KalmanRun {
    pub fn n(&self) -> usize {
        self.nu.len()
    }

    /// Writes `i,nu,F` rows, one per time step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (i, (&nu, &f)) in self.nu.iter().zip(&self.f).enumerate() {
            wr.serialize(InnovationRow { i: i + 1, nu, f })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Filter with observation `Z_i = X_i + m_i + e_i`, `e_i ~ N(0, v_i)`.
/// The time-varying offsets serve the mixture approximation of log-χ² noise.
pub fn kalman_filter_offsets(theta: &Theta, z: &[f64], offsets: &[f64], variances: &[f64]) -> Result<KalmanRun> {
    Theta::new(theta.phi, theta.sigma2)?;
    if z.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if offsets.len() != z.len() || variances.len() != z.len() {
        return Err(Error::InvalidParameter("offset and variance sequences must match z".into()));
    }
    if let Some(v) = variances.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("observation variance {v} must be >= 0")));
    }
    let n = z.len();
    let mut run = KalmanRun {
        nu: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        x_pred: Vec::with_capacity(n),
        p_pred: Vec::with_capacity(n),
        x_filt: Vec::with_capacity(n),
        p_filt: Vec::with_capacity(n),
        loglik: 0.0,
    };
    let mut xp = 0.0;
    let mut pp = theta.gamma2();
    let mut ll = -0.5 * n as f64 * (2.0 * PI).ln();
    for i in 0..n {
        let nu = z[i] - xp - offsets[i];
        let f = pp + variances[i];
        assert!(f > 0.0, "prediction-error variance must be positive");
        let k = pp / f;
        let xf = xp + k * nu;
        let pf = pp * variances[i] / f;
        ll -= 0.5 * (f.ln() + nu * nu / f);
        run.nu.push(nu);
        run.f.push(f);
        run.x_pred.push(xp);
        run.p_pred.push(pp);
        run.x_filt.push(xf);
        run.p_filt.push(pf);
        xp = theta.phi * xf;
        pp = theta.phi * theta.phi * pf + theta.sigma2;
    }
    run.loglik = ll;
    Ok(run)
}

pub fn kalman_filter(theta: &Theta, sigma_eps2: f64, z: &[f64]) -> Result<KalmanRun> {
    if !(sigma_eps2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_eps2 = {sigma_eps2} must be >= 0")));
    }
    kalman_filter_offsets(theta, z, &vec![0.0; z.len()], &vec![sigma_eps2; z.len()])
}

pub fn kalman_loglik(theta: &Theta, sigma_eps2: f64, z: &[f64]) -> Result<f64> {
    Ok(kalman_filter(theta, sigma_eps2, z)?.loglik)
}

/// Maximizes the Gaussian likelihood over the model box. For SV data the
/// log-χ² noise is treated as if it were Gaussian with the same variance.
pub fn qml_estimate(model: &ModelSpec, z: &[f64]) -> Result<MinimizeResult> {
    qml_estimate_with(model, z, &NelderMeadConfig::default())
}

pub fn qml_estimate_with(model: &ModelSpec, z: &[f64], nm: &NelderMeadConfig) -> Result<MinimizeResult> {
    if z.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: z.len() });
    }
    let out = multistart(
        |p| match kalman_loglik(&Theta::from_array(p), model.sigma_eps2, z) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        },
        &model.bounds,
        nm,
    );
    if !out.best.f.is_finite() {
        return Err(Error::InvalidParameter("likelihood is not finite anywhere in the box".into()));
    }
    Ok(MinimizeResult {
        theta_hat: Theta::from_array(out.best.x),
        objective_value: out.best.f,
        restarts_used: out.starts,
        converged: out.any_converged,
    })
}

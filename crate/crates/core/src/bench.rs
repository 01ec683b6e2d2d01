//! Monte Carlo studies: every method on the same simulated data per
//! replicate, with MSE, interval coverage and timings.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{confidence_interval, contrast_sandwich, ConfidenceInterval, DEFAULT_Q_TRUNC};
use crate::contrast::{minimize_objective, ContrastConfig, ContrastObjective};
use crate::error::{Error, Result};
use crate::kalman::qml_estimate_with;
use crate::model::{simulate_ar1, simulate_sv, ModelKind, ModelSpec, Theta};
use crate::particle::{run_filter, FilterConfig, FilterMethod};
use crate::rng::{stream_id, substream};
use crate::siemle::{siemle_estimate, siemle_estimate_with, MixtureApprox, SiemleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Contrast,
    Qml,
    Bootstrap,
    Apf,
    Ksapf,
    Siemle,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Contrast, Method::Qml, Method::Bootstrap, Method::Apf, Method::Ksapf, Method::Siemle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Contrast => "contrast",
            Method::Qml => "qml",
            Method::Bootstrap => "bootstrap",
            Method::Apf => "apf",
            Method::Ksapf => "ksapf",
            Method::Siemle => "siemle",
        }
    }

    fn role(self) -> u64 {
        1 + self as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub theta0: Theta,
    pub alpha: f64,
    pub q_trunc: usize,
    pub contrast: ContrastConfig,
    pub filter: FilterConfig,
    pub siemle: SiemleConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            reps: 100,
            seed: 1,
            theta0: Theta { phi: 0.7, sigma2: 0.3 },
            alpha: 0.05,
            q_trunc: DEFAULT_Q_TRUNC,
            contrast: ContrastConfig::default(),
            filter: FilterConfig::default(),
            siemle: SiemleConfig::default(),
        }
    }
}

/// One method's result on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub method: Method,
    pub replicate: usize,
    pub phi_hat: f64,
    pub sigma2_hat: f64,
    pub seconds: f64,
    /// Wald intervals; contrast only, and only when the sandwich exists.
    pub ci: Option<[ConfidenceInterval; 2]>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn theta(&self) -> Theta {
        Theta { phi: self.phi_hat, sigma2: self.sigma2_hat }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mse: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    pub total_seconds: f64,
    pub coverage: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStudyReport {
    pub model: ModelSpec,
    pub config: StudyConfig,
    pub methods: Vec<Method>,
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<MethodSummary>,
}

/// `(1/N) Σ [(φ̂_j − φ₀)² + (σ̂²_j − σ₀²)²]`
pub fn mse(estimates: &[Theta], truth: &Theta) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let s: f64 = estimates
        .iter()
        .map(|e| (e.phi - truth.phi).powi(2) + (e.sigma2 - truth.sigma2).powi(2))
        .sum();
    Ok(s / estimates.len() as f64)
}

/// Fraction of intervals covering each coordinate of `truth`.
pub fn coverage(cis: &[[ConfidenceInterval; 2]], truth: &Theta) -> Result<[f64; 2]> {
    if cis.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let t = truth.as_array();
    let mut hits = [0usize; 2];
    for ci in cis {
        for k in 0..2 {
            hits[k] += ci[k].contains(t[k]) as usize;
        }
    }
    let n = cis.len() as f64;
    Ok([hits[0] as f64 / n, hits[1] as f64 / n])
}

/// Simulates the observation sequence for one replicate.
pub fn simulate_observations<R: Rng + ?Sized>(model: &ModelSpec, theta: &Theta, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(match model.kind {
        ModelKind::GaussianAr1 => simulate_ar1(theta, model.sigma_eps2, n, rng)?.z,
        ModelKind::LogSv => simulate_sv(theta, model.beta, n, rng)?.trajectory.z,
    })
}

/// Estimate, elapsed seconds of the estimation itself, and intervals.
pub struct MethodFit {
    pub theta_hat: Theta,
    pub seconds: f64,
    pub ci: Option<[ConfidenceInterval; 2]>,
    pub sigma: Option<nalgebra::Matrix2<f64>>,
}

pub fn fit_method<R: Rng + ?Sized>(method: Method, model: &ModelSpec, z: &[f64], cfg: &StudyConfig, rng: &mut R) -> Result<MethodFit> {
    let start = Instant::now();
    let theta_hat = match method {
        Method::Contrast => {
            let obj = ContrastObjective::new(*model, z, cfg.contrast.quadrature)?;
            let fit = minimize_objective(&obj, &cfg.contrast.optimizer)?;
            let seconds = start.elapsed().as_secs_f64();
            let (ci, sigma) = match contrast_sandwich(&obj, &fit.theta_hat, cfg.q_trunc) {
                Ok(parts) => (Some(confidence_interval(&fit.theta_hat, &parts.sigma, z.len(), cfg.alpha)?), Some(parts.sigma)),
                Err(e) => {
                    log::warn!("no sandwich at {:?}: {e}", fit.theta_hat);
                    (None, None)
                }
            };
            return Ok(MethodFit { theta_hat: fit.theta_hat, seconds, ci, sigma });
        }
        Method::Qml => qml_estimate_with(model, z, &cfg.contrast.optimizer)?.theta_hat,
        Method::Bootstrap => run_filter(FilterMethod::Bootstrap, z, model, &cfg.filter, rng)?.0,
        Method::Apf => run_filter(FilterMethod::Apf, z, model, &cfg.filter, rng)?.0,
        Method::Ksapf => run_filter(FilterMethod::Ksapf, z, model, &cfg.filter, rng)?.0,
        Method::Siemle => match model.kind {
            ModelKind::LogSv => siemle_estimate(model, z, &cfg.siemle, rng)?.result.theta_hat,
            ModelKind::GaussianAr1 => {
                let mix = MixtureApprox::single(model.sigma_eps2)?;
                siemle_estimate_with(model, z, &mix, &cfg.siemle, rng)?.result.theta_hat
            }
        },
    };
    Ok(MethodFit { theta_hat, seconds: start.elapsed().as_secs_f64(), ci: None, sigma: None })
}

fn run_replicate(model: &ModelSpec, methods: &[Method], cfg: &StudyConfig, n: usize, rep: usize) -> Result<Vec<ReplicateRecord>> {
    let mut data_rng = substream(cfg.seed, stream_id(rep as u64, 0));
    let z = simulate_observations(model, &cfg.theta0, n, &mut data_rng)?;
    Ok(methods
        .iter()
        .map(|&m| {
            let mut rng = substream(cfg.seed, stream_id(rep as u64, m.role()));
            match fit_method(m, model, &z, cfg, &mut rng) {
                Ok(fit) => ReplicateRecord {
                    method: m,
                    replicate: rep,
                    phi_hat: fit.theta_hat.phi,
                    sigma2_hat: fit.theta_hat.sigma2,
                    seconds: fit.seconds,
                    ci: fit.ci,
                    error: None,
                },
                Err(e) => ReplicateRecord {
                    method: m,
                    replicate: rep,
                    phi_hat: f64::NAN,
                    sigma2_hat: f64::NAN,
                    seconds: 0.0,
                    ci: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Aggregates per-method statistics from replicate records.
pub fn summarize(records: &[ReplicateRecord], methods: &[Method], truth: &Theta) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == m).collect();
            let good: Vec<Theta> = rs.iter().filter(|r| r.ok()).map(|r| r.theta()).collect();
            let cis: Vec<[ConfidenceInterval; 2]> = rs.iter().filter_map(|r| r.ci).collect();
            MethodSummary {
                method: m,
                mse: mse(&good, truth).ok(),
                successes: good.len(),
                failures: rs.len() - good.len(),
                total_seconds: rs.iter().map(|r| r.seconds).sum(),
                coverage: coverage(&cis, truth).ok(),
            }
        })
        .collect()
}

fn check_methods(methods: &[Method]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods requested".into()));
    }
    Ok(())
}

pub fn run_study(model: &ModelSpec, methods: &[Method], cfg: &StudyConfig) -> Result<McStudyReport> {
    check_methods(methods)?;
    if cfg.reps < 1 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Theta::new(cfg.theta0.phi, cfg.theta0.sigma2)?;
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(model, methods, cfg, cfg.n, rep))
        .collect::<Result<_>>()?;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let summaries = summarize(&records, methods, &cfg.theta0);
    Ok(McStudyReport { model: *model, config: cfg.clone(), methods: methods.to_vec(), records, summaries })
}

impl McStudyReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn estimates(&self, method: Method) -> Vec<Theta> {
        self.records.iter().filter(|r| r.method == method && r.ok()).map(|r| r.theta()).collect()
    }

    /// Per-replicate rows `method,replicate,phi_hat,sigma2_hat,seconds`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            method: &'a str,
            replicate: usize,
            phi_hat: f64,
            sigma2_hat: f64,
            seconds: f64,
        }
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(Row {
                method: r.method.name(),
                replicate: r.replicate,
                phi_hat: r.phi_hat,
                sigma2_hat: r.sigma2_hat,
                seconds: r.seconds,
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub coverage: [f64; 2],
    /// Median interval width per coordinate.
    pub median_width: [f64; 2],
    pub intervals: usize,
    pub failures: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Contrast-estimator coverage and interval widths along `n_grid`.
pub fn coverage_curve(model: &ModelSpec, n_grid: &[usize], cfg: &StudyConfig) -> Result<Vec<CoverageRow>> {
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter("empty n grid".into()));
    }
    if n_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("n grid must be nondecreasing".into()));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        // Each grid point draws its own data so rows are independent.
        let sub = StudyConfig { seed: cfg.seed.wrapping_add(gi as u64 * 0x9E37_79B9), ..cfg.clone() };
        let recs: Vec<ReplicateRecord> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_replicate(model, &[Method::Contrast], &sub, n, rep))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let cis: Vec<[ConfidenceInterval; 2]> = recs.iter().filter_map(|r| r.ci).collect();
        let cov = coverage(&cis, &cfg.theta0).unwrap_or([f64::NAN; 2]);
        rows.push(CoverageRow {
            n,
            coverage: cov,
            median_width: [
                median(cis.iter().map(|c| c[0].width()).collect()),
                median(cis.iter().map(|c| c[1].width()).collect()),
            ],
            intervals: cis.len(),
            failures: recs.len() - cis.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T0: Theta = Theta { phi: 0.7, sigma2: 0.3 };

    fn ci(lo: f64, hi: f64) -> ConfidenceInterval {
        ConfidenceInterval { lo, hi, alpha: 0.05 }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[T0, T0], &T0).unwrap(), 0.0);
        let v = mse(&[Theta { phi: 0.8, sigma2: 0.4 }], &T0).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
        assert!(mse(&[], &T0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let all = vec![[ci(0.6, 0.8), ci(0.2, 0.4)]; 3];
        assert_eq!(coverage(&all, &T0).unwrap(), [1.0, 1.0]);
        let none = vec![[ci(0.0, 0.1), ci(0.9, 1.0)]; 3];
        assert_eq!(coverage(&none, &T0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("kalman".parse::<Method>().is_err());
    }

    fn small_cfg() -> StudyConfig {
        StudyConfig {
            n: 200,
            reps: 3,
            seed: 11,
            filter: FilterConfig { particles: 200, ..Default::default() },
            siemle: SiemleConfig { m_tilde: 4, max_iter: 3, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn smoke_study_all_methods() {
        let model = ModelSpec::gaussian_ar1(0.1).unwrap();
        let cfg = StudyConfig { reps: 1, ..small_cfg() };
        let rep = run_study(&model, &Method::ALL, &cfg).unwrap();
        assert_eq!(rep.records.len(), 6);
        assert!(rep.records.iter().all(|r| r.ok() && r.phi_hat.is_finite() && r.sigma2_hat.is_finite()));
        assert!(rep.records[0].ci.is_some());
    }

    #[test]
    fn study_is_reproducible_and_auditable() {
        let model = ModelSpec::log_sv_with_variance(0.1).unwrap();
        let methods = [Method::Contrast, Method::Qml, Method::Bootstrap];
        let a = run_study(&model, &methods, &small_cfg()).unwrap();
        let b = run_study(&model, &methods, &small_cfg()).unwrap();
        let strip = |r: &McStudyReport| r.records.iter().map(|x| (x.method, x.replicate, x.phi_hat, x.sigma2_hat)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        let json = serde_json::to_string(&a).unwrap();
        let back: McStudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(summarize(&back.records, &back.methods, &back.config.theta0), a.summaries);
        for s in &a.summaries {
            let total: f64 = a.records.iter().filter(|r| r.method == s.method).map(|r| r.seconds).sum();
            assert_eq!(total, s.total_seconds);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,replicate,phi_hat,sigma2_hat,seconds");
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let model = ModelSpec::gaussian_ar1(0.1).unwrap();
        let cfg = StudyConfig { filter: FilterConfig { h: 2.0, ..Default::default() }, reps: 2, n: 100, ..small_cfg() };
        let rep = run_study(&model, &[Method::Qml, Method::Ksapf], &cfg).unwrap();
        let s = rep.summary(Method::Ksapf).unwrap();
        assert_eq!((s.successes, s.failures), (0, 2));
        assert!(s.mse.is_none());
        assert_eq!(rep.summary(Method::Qml).unwrap().successes, 2);
    }

    #[test]
    fn coverage_curve_accepts_single_point() {
        let model = ModelSpec::gaussian_ar1(0.1).unwrap();
        let rows = coverage_curve(&model, &[300], &small_cfg()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].coverage.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(coverage_curve(&model, &[300, 200], &small_cfg()).is_err());
    }

    proptest! {
        #[test]
        fn mse_permutation_invariant(v in proptest::collection::vec((-0.99f64..0.99, 0.01f64..3.0), 1..20), k in 0usize..20) {
            let est: Vec<Theta> = v.iter().map(|&(p, s)| Theta { phi: p, sigma2: s }).collect();
            let mut rot = est.clone();
            let len = rot.len();
            rot.rotate_left(k % len);
            let a = mse(&est, &T0).unwrap();
            let b = mse(&rot, &T0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }
    }
}

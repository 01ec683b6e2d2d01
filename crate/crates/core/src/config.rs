//! TOML run configuration. Every field has a default, so a file only needs
//! the settings it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::StudyConfig;
use crate::error::{Error, Result};
use crate::ingest::KappaMode;
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub sigma_eps2: f64,
    /// SV exponent; when absent it is derived from `sigma_eps2`.
    pub beta: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::GaussianAr1, sigma_eps2: 0.1, beta: None }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec> {
        match (self.kind, self.beta) {
            (ModelKind::GaussianAr1, _) => ModelSpec::gaussian_ar1(self.sigma_eps2),
            (ModelKind::LogSv, Some(b)) => ModelSpec::log_sv(b),
            (ModelKind::LogSv, None) => ModelSpec::log_sv_with_variance(self.sigma_eps2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub study: StudyConfig,
    pub kappa: KappaMode,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle::Resampling;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let c = Config::from_toml_str(
            "kappa = \"exact\"\n[model]\nkind = \"log-sv\"\n[study]\nreps = 7\n[study.filter]\nparticles = 50\nresampling = \"multinomial\"\n",
        )
        .unwrap();
        assert_eq!(c.kappa, KappaMode::Exact);
        assert_eq!(c.study.reps, 7);
        assert_eq!(c.study.n, 1000);
        assert_eq!(c.study.filter.particles, 50);
        assert_eq!(c.study.filter.resampling, Resampling::Multinomial);
        assert_eq!(c.model.spec().unwrap().kind, ModelKind::LogSv);
    }

    #[test]
    fn round_trip_and_errors() {
        let c = Config::default();
        assert_eq!(Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
        assert!(Config::from_toml_str("[study]\nreps = \"many\"").is_err());
    }
}

//! Parameter estimation for hidden AR(1) state-space models observed with
//! additive noise: a deconvolution contrast estimator with sandwich
//! confidence intervals, plus Kalman QML, particle filters and a simulated
//! EM baseline.

pub mod asymptotics;
pub mod bench;
pub mod config;
pub mod contrast;
pub mod deconv;
pub mod error;
pub mod gauss;
pub mod ingest;
pub mod kalman;
pub mod model;
pub mod optim;
pub mod particle;
pub mod rng;
pub mod siemle;
pub mod special;

pub use error::{Error, Result};
pub use model::{ModelKind, ModelSpec, ParamBox, Theta, Trajectory};

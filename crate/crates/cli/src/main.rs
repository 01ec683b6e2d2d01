use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ssm_contrast::asymptotics::ConfidenceInterval;
use ssm_contrast::bench::{coverage_curve, fit_method, run_study, Method, StudyConfig};
use ssm_contrast::config::Config;
use ssm_contrast::ingest::{to_log_chisq, to_returns, KappaMode, PriceSeries};
use ssm_contrast::model::{simulate_ar1, simulate_sv};
use ssm_contrast::rng::substream;
use ssm_contrast::{Error, ModelKind, ModelSpec, Theta, Trajectory};

#[derive(Parser)]
#[command(name = "ssmc", version, about = "Parameter estimation for noisy AR(1) and log-SV state-space models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ar1,
    Sv,
}

#[derive(Clone, Copy, ValueEnum)]
enum KappaArg {
    Rounded,
    Exact,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    #[arg(long = "sigma-eps2", global = true)]
    sigma_eps2: Option<f64>,
    /// SV exponent; overrides --sigma-eps2 for the SV model.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    particles: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV (x,z).
    Simulate {
        #[arg(long, default_value_t = 0.7)]
        phi: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate θ from an observation CSV and print JSON.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "contrast")]
        method: String,
    },
    /// Monte Carlo study over several methods.
    McStudy {
        /// Comma-separated method names.
        #[arg(long, alias = "method", default_value = "contrast,qml,bootstrap,apf,ksapf")]
        methods: String,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-replicate CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Contrast-estimator coverage along a grid of sample sizes.
    Coverage {
        #[arg(long = "n-grid", value_delimiter = ',', default_value = "100,500,1000,2000,5000")]
        n_grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a price CSV to log-squared returns.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kappa: Option<KappaArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures split by exit code: bad input (1) or a failed estimation (2).
enum Failure {
    Input(String),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::InvalidParameter(_)
            | Error::InsufficientData { .. }
            | Error::NonStationary(_) => Failure::Input(e.to_string()),
            _ => Failure::Estimation(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn settings(c: &Common) -> Result<(ModelSpec, Config), Failure> {
    let mut cfg = match &c.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(m) = c.model {
        cfg.model.kind = match m {
            ModelArg::Ar1 => ModelKind::GaussianAr1,
            ModelArg::Sv => ModelKind::LogSv,
        };
    }
    if let Some(v) = c.sigma_eps2 {
        cfg.model.sigma_eps2 = v;
        cfg.model.beta = None;
    }
    if let Some(b) = c.beta {
        cfg.model.beta = Some(b);
    }
    let s = &mut cfg.study;
    s.n = c.n.unwrap_or(s.n);
    s.reps = c.reps.unwrap_or(s.reps);
    s.seed = c.seed.unwrap_or(s.seed);
    s.alpha = c.alpha.unwrap_or(s.alpha);
    s.filter.particles = c.particles.unwrap_or(s.filter.particles);
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        return Err(Failure::Input(format!("alpha = {} must lie in (0, 1)", s.alpha)));
    }
    Ok((cfg.model.spec()?, cfg))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, v: &T) -> Result<(), Failure> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Input(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_methods(s: &str) -> Result<Vec<Method>, Failure> {
    let methods = s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<Result<Vec<Method>, _>>()?;
    if methods.is_empty() {
        return Err(Failure::Input("no methods given".into()));
    }
    Ok(methods)
}

#[derive(Serialize)]
struct EstimateOutput {
    theta_hat: Theta,
    sigma_matrix: Option<[[f64; 2]; 2]>,
    ci: Option<[ConfidenceInterval; 2]>,
    seconds: f64,
}

fn simulate(model: &ModelSpec, study: &StudyConfig, theta: Theta, out: &Option<PathBuf>) -> Result<(), Failure> {
    Theta::new(theta.phi, theta.sigma2)?;
    let mut rng = substream(study.seed, 0);
    let traj = match model.kind {
        ModelKind::GaussianAr1 => simulate_ar1(&theta, model.sigma_eps2, study.n, &mut rng)?,
        ModelKind::LogSv => simulate_sv(&theta, model.beta, study.n, &mut rng)?.trajectory,
    };
    let mut w = output(out)?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn estimate(model: &ModelSpec, study: &StudyConfig, input: &Path, method: &str) -> Result<(), Failure> {
    let method: Method = method.parse()?;
    let z = Trajectory::read_csv_file(input)?.z;
    let start = Instant::now();
    let fit = fit_method(method, model, &z, study, &mut substream(study.seed, 1)).map_err(|e| match Failure::from(e) {
        Failure::Input(m) if z.len() >= 2 => Failure::Estimation(m),
        f => f,
    })?;
    let seconds = if method == Method::Contrast { fit.seconds } else { start.elapsed().as_secs_f64() };
    let out = EstimateOutput {
        theta_hat: fit.theta_hat,
        sigma_matrix: fit.sigma.map(|s| [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]]),
        ci: fit.ci,
        seconds,
    };
    write_json(&None, &out)
}

fn ingest(input: &Path, kappa: KappaMode, out: &Option<PathBuf>) -> Result<(), Failure> {
    let prices = PriceSeries::read_csv_file(input)?;
    let z = to_log_chisq(&to_returns(&prices)?, kappa)?;
    if z.floored > 0 {
        eprintln!("{}", serde_json::json!({ "warning": "floored_returns", "count": z.floored }));
    }
    let mut w = output(out)?;
    Trajectory::observed(z.z).write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (model, cfg) = settings(&cli.common)?;
    let study = &cfg.study;
    match cli.cmd {
        Command::Simulate { phi, sigma2, out } => simulate(&model, study, Theta { phi, sigma2 }, &out),
        Command::Estimate { input, method } => estimate(&model, study, &input, &method),
        Command::McStudy { methods, out, csv } => {
            let methods = parse_methods(&methods)?;
            let report = run_study(&model, &methods, study)?;
            if let Some(p) = csv {
                report.write_csv(File::create(p)?)?;
            }
            write_json(&out, &report)
        }
        Command::Coverage { n_grid, out } => {
            let rows = coverage_curve(&model, &n_grid, study)?;
            write_json(&out, &rows)
        }
        Command::Ingest { input, kappa, out } => {
            let mode = match kappa {
                Some(KappaArg::Rounded) => KappaMode::Rounded,
                Some(KappaArg::Exact) => KappaMode::Exact,
                None => cfg.kappa,
            };
            ingest(&input, mode, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("{}", serde_json::json!({ "error": "input", "message": m }));
            ExitCode::from(1)
        }
        Err(Failure::Estimation(m)) => {
            eprintln!("{}", serde_json::json!({ "error": "estimation", "message": m }));
            ExitCode::from(2)
        }
    }
}

//! Price series to log-squared-return observations.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::log_chisq_mean;

/// A 1001-day synthetic price series with stochastic volatility.
pub const SAMPLE_PRICES_CSV: &str = include_str!("../data/synthetic_prices.csv");

/// Returns smaller than this in absolute value are floored before `log y²`.
pub const RETURN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Option<Vec<String>>,
    pub s: Vec<f64>,
}

impl PriceSeries {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        let series = Self { dates: None, s };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: self.s.len() });
        }
        if let Some((i, p)) = self.s.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Parse(format!("price {p} at row {} is not strictly positive", i + 1)));
        }
        if let Some(d) = &self.dates {
            if d.len() != self.s.len() {
                return Err(Error::Parse("dates and prices differ in length".into()));
            }
        }
        Ok(())
    }

    /// CSV with a header row and either one price column or `date,price`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let width = rd.headers()?.len();
        if width == 0 || width > 2 {
            return Err(Error::Parse(format!("expected 1 or 2 columns, found {width}")));
        }
        let mut dates = Vec::new();
        let mut s = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = rec.get(width - 1).unwrap_or("");
            let p: f64 = field.parse().map_err(|_| Error::Parse(format!("row {}: '{field}' is not a number", i + 1)))?;
            s.push(p);
            if width == 2 {
                dates.push(rec.get(0).unwrap_or("").to_string());
            }
        }
        let series = Self { dates: (width == 2).then_some(dates), s };
        series.validate()?;
        Ok(series)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub fn sample_prices() -> PriceSeries {
    PriceSeries::read_csv(SAMPLE_PRICES_CSV.as_bytes()).expect("bundled price series is valid")
}

/// `100·log(S_i/S_{i−1})`, centred at its sample mean.
pub fn to_returns(series: &PriceSeries) -> Result<Vec<f64>> {
    series.validate()?;
    let raw: Vec<f64> = series.s.windows(2).map(|w| 100.0 * (w[1] / w[0]).ln()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.iter().map(|r| r - mean).collect())
}

/// Prices with the given log-returns (in percent), starting from `s0`.
pub fn prices_from_returns(s0: f64, returns: &[f64]) -> Result<PriceSeries> {
    let mut s = Vec::with_capacity(returns.len() + 1);
    s.push(s0);
    let mut log_p = s0.ln();
    for r in returns {
        log_p += r / 100.0;
        s.push(log_p.exp());
    }
    PriceSeries::new(s)
}

/// Additive constant in `Z = log y² + κ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaMode {
    /// The rounded constant 1.27.
    #[default]
    Rounded,
    /// `−ψ(1/2) − log 2`.
    Exact,
}

impl KappaMode {
    pub fn value(self) -> f64 {
        match self {
            KappaMode::Rounded => 1.27,
            KappaMode::Exact => -log_chisq_mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSquared {
    pub z: Vec<f64>,
    /// How many returns were floored at `RETURN_FLOOR`.
    pub floored: usize,
}

pub fn to_log_chisq(returns: &[f64], mode: KappaMode) -> Result<LogSquared> {
    if let Some(r) = returns.iter().find(|r| !r.is_finite()) {
        return Err(Error::Parse(format!("return {r} is not finite")));
    }
    let kappa = mode.value();
    let mut floored = 0;
    let z = returns
        .iter()
        .map(|&y| {
            let a = if y.abs() < RETURN_FLOOR {
                floored += 1;
                RETURN_FLOOR
            } else {
                y.abs()
            };
            2.0 * a.ln() + kappa
        })
        .collect();
    if floored > 0 {
        log::warn!("{floored} returns below {RETURN_FLOOR} were floored before taking logs");
    }
    Ok(LogSquared { z, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_prices_give_zero_returns() {
        let r = to_returns(&PriceSeries::new(vec![5.0; 4]).unwrap()).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn three_prices_two_observations() {
        let p = PriceSeries::read_csv("price\n100\n101\n100.5\n".as_bytes()).unwrap();
        let z = to_log_chisq(&to_returns(&p).unwrap(), KappaMode::Rounded).unwrap();
        assert_eq!(z.z.len(), 2);
    }

    #[test]
    fn returns_are_centred() {
        let p = PriceSeries::new((0..1001).map(|i| 100.0 + (i as f64 * 0.3).sin() + i as f64 * 0.01).collect()).unwrap();
        let r = to_returns(&p).unwrap();
        assert_eq!(r.len(), 1000);
        assert!(r.iter().sum::<f64>().abs() / 1000.0 < 1e-12);
    }

    #[test]
    fn log_chisq_examples() {
        let z = to_log_chisq(&[2.0], KappaMode::Rounded).unwrap();
        assert!((z.z[0] - 2.65629).abs() < 1e-5);
        let z = to_log_chisq(&[0.0, 1.0], KappaMode::Rounded).unwrap();
        assert_eq!(z.floored, 1);
        assert!(z.z[0].is_finite());
        assert!((KappaMode::Exact.value() - 1.27036).abs() < 1e-5);
        assert!(to_log_chisq(&[f64::NAN], KappaMode::Exact).is_err());
    }

    #[test]
    fn bundled_sample_has_1000_returns() {
        let p = sample_prices();
        assert_eq!(p.s.len(), 1001);
        assert_eq!(to_returns(&p).unwrap().len(), 1000);
    }

    #[test]
    fn rejects_bad_prices() {
        assert!(PriceSeries::new(vec![1.0, 0.0]).is_err());
        assert!(PriceSeries::new(vec![1.0]).is_err());
        assert!(PriceSeries::read_csv("price\n1\nabc\n".as_bytes()).is_err());
        let dated = PriceSeries::read_csv("date,price\n2020-01-01,1\n2020-01-02,2\n".as_bytes()).unwrap();
        assert_eq!(dated.dates.unwrap()[1], "2020-01-02");
    }

    proptest! {
        #[test]
        fn price_round_trip(r in proptest::collection::vec(-5.0f64..5.0, 2..200), s0 in 1.0f64..1000.0) {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let centred: Vec<f64> = r.iter().map(|v| v - mean).collect();
            let back = to_returns(&prices_from_returns(s0, &r).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&centred) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

//! Special functions: complex Lanczos Gamma and the log-chi-square moments.

use num_complex::Complex64;
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;

// Lanczos coefficients for g = 7, n = 9 (the GSL / Numerical Recipes set).
const LANCZOS_COEFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Principal-branch `ln Γ(z)`, continuous along vertical lines `Re z >= 1/2`.
///
/// Working in log space keeps `Γ(1/2 + it)` representable for large `|t|`
/// where the modulus decays like `exp(-π|t|/2)`.
pub fn ln_gamma_complex(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // Reflection: Γ(z)Γ(1-z) = π / sin(πz).
        let s = (Complex64::from(PI) * z).sin();
        return Complex64::from(PI.ln()) - s.ln() - ln_gamma_complex(1.0 - z);
    }
    let z = z - 1.0;
    let mut series = Complex64::from(LANCZOS_COEFS[0]);
    for (i, &c) in LANCZOS_COEFS.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + series.ln()
}

pub fn gamma_complex(z: Complex64) -> Complex64 {
    ln_gamma_complex(z).exp()
}

/// `E[log ξ²]` for standard Gaussian ξ, i.e. `ψ(1/2) + log 2`.
pub fn log_chisq_mean() -> f64 {
    statrs::function::gamma::digamma(0.5) + 2f64.ln()
}

/// `Var[log ξ²] = π²/2`.
pub const LOG_CHISQ_VARIANCE: f64 = PI * PI / 2.0;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_half_is_sqrt_pi() {
        let g = gamma_complex(Complex64::new(0.5, 0.0));
        assert_relative_eq!(g.re, PI.sqrt(), max_relative = 1e-14);
        assert!(g.im.abs() < 1e-15);
    }

    #[test]
    fn gamma_integers_are_factorials() {
        let mut fact = 1.0;
        for n in 1..15 {
            let g = gamma_complex(Complex64::new(n as f64, 0.0));
            assert_relative_eq!(g.re, fact, max_relative = 1e-13);
            fact *= n as f64;
        }
    }

    #[test]
    fn reflection_identity_on_critical_line() {
        // |Γ(1/2 + it)|² = π / cosh(πt)
        for &t in &[0.1, 0.5, 1.0, 5.0, 20.0, 60.0] {
            let lg = ln_gamma_complex(Complex64::new(0.5, t));
            let lhs = 2.0 * lg.re;
            let rhs = PI.ln() - (PI * t).cosh().ln();
            assert!((lhs - rhs).abs() < 1e-11, "t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn recurrence_holds_off_axis() {
        // Γ(z+1) = z Γ(z)
        let z = Complex64::new(0.7, 2.3);
        let lhs = gamma_complex(z + 1.0);
        let rhs = z * gamma_complex(z);
        assert!((lhs - rhs).norm() / rhs.norm() < 1e-13);
    }

    #[test]
    fn reflection_branch_matches_recurrence() {
        let z = Complex64::new(0.2, 0.4);
        let lhs = gamma_complex(z);
        let rhs = gamma_complex(z + 1.0) / z;
        assert!((lhs - rhs).norm() / rhs.norm() < 1e-12);
    }

    #[test]
    fn log_chisq_mean_value() {
        let euler = 0.577_215_664_901_532_9;
        assert!((log_chisq_mean() - (-euler - 2f64.ln())).abs() < 1e-12);
        assert!((log_chisq_mean() + 1.270_362_845).abs() < 1e-8);
    }
}

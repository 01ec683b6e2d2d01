//! Exact expectations `E[p(X) exp(−½ Σ d_i X_i²)]` for `X ~ N(0, Σ)` and a
//! polynomial `p` in up to four variables.
//!
//! The damping tilts the law to `N(0, M)` with `M = (Σ⁻¹ + D)⁻¹` and
//! multiplies by `√(det M / det Σ)`; monomial moments under `N(0, M)` come
//! from the Isserlis recursion `E[X_i g] = Σ_j M_ij E[∂_j g]`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_VARS: usize = 4;

type Exps = [u8; MAX_VARS];

/// Sparse polynomial with `f64` coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: HashMap<Exps, f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        let mut p = Poly::default();
        p.add_term([0; MAX_VARS], c);
        p
    }

    /// `c · x_var^power`
    pub fn monomial(var: usize, power: u8, c: f64) -> Self {
        assert!(var < MAX_VARS, "variable index {var} out of range");
        let mut e = [0; MAX_VARS];
        e[var] = power;
        let mut p = Poly::default();
        p.add_term(e, c);
        p
    }

    /// `Σ_k coeffs[k] · x_var^k`
    pub fn univariate(var: usize, coeffs: &[f64]) -> Self {
        let mut p = Poly::default();
        for (k, &c) in coeffs.iter().enumerate() {
            p = p.add(&Poly::monomial(var, k as u8, c));
        }
        p
    }

    fn add_term(&mut self, e: Exps, c: f64) {
        if c != 0.0 {
            *self.terms.entry(e).or_insert(0.0) += c;
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly { terms: self.terms.iter().map(|(e, c)| (*e, c * s)).collect() }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let mut e = *ea;
                for i in 0..MAX_VARS {
                    e[i] = e[i].checked_add(eb[i]).expect("polynomial degree overflow");
                }
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    fn max_var(&self) -> usize {
        self.terms
            .keys()
            .filter_map(|e| e.iter().rposition(|&p| p > 0))
            .max()
            .map_or(0, |v| v + 1)
    }
}

/// Probabilists' Hermite polynomial `He_m(x / scale)` in variable `var`.
pub fn hermite(var: usize, m: usize, scale: f64) -> Poly {
    // Coefficients of He_m in x, by He_{k+1} = x He_k − k He_{k−1}.
    let mut prev = vec![1.0];
    let mut cur = vec![0.0, 1.0];
    if m == 0 {
        return Poly::constant(1.0);
    }
    for k in 1..m {
        let mut next = vec![0.0; k + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= k as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    let scaled: Vec<f64> = cur.iter().enumerate().map(|(i, c)| c / scale.powi(i as i32)).collect();
    Poly::univariate(var, &scaled)
}

/// `E[p(X) exp(−½ Σ d_i X_i²)]` for `X ~ N(0, cov)`.
pub fn damped_expectation(cov: &DMatrix<f64>, damping: &[f64], poly: &Poly) -> Result<f64> {
    let d = cov.nrows();
    if d == 0 || d > MAX_VARS || cov.ncols() != d || damping.len() != d {
        return Err(Error::InvalidParameter(format!(
            "need a square covariance of size 1..={MAX_VARS} with matching damping"
        )));
    }
    if poly.max_var() > d {
        return Err(Error::InvalidParameter("polynomial uses more variables than the covariance".into()));
    }
    if damping.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidParameter("damping must be nonnegative".into()));
    }
    let chol = cov.clone().cholesky().ok_or(Error::NotPsd(min_diag(cov)))?;
    let det_cov = chol.determinant();
    let a = chol.inverse() + DMatrix::from_diagonal(&DVector::from_column_slice(damping));
    let chol_a = a.cholesky().ok_or(Error::NotPsd(0.0))?;
    let det_a = chol_a.determinant();
    let m = chol_a.inverse();
    let factor = 1.0 / (det_cov * det_a).sqrt();

    let mut moments = Moments { m: &m, memo: HashMap::new() };
    let mut acc = 0.0;
    // Sum in a fixed order so results are reproducible bit for bit.
    let mut terms: Vec<_> = poly.terms.iter().collect();
    terms.sort_by_key(|(e, _)| **e);
    for (e, c) in terms {
        acc += c * moments.get(*e);
    }
    Ok(factor * acc)
}

fn min_diag(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().cloned().fold(f64::INFINITY, f64::min)
}

struct Moments<'a> {
    m: &'a DMatrix<f64>,
    memo: HashMap<Exps, f64>,
}

impl Moments<'_> {
    fn get(&mut self, e: Exps) -> f64 {
        let total: u32 = e.iter().map(|&p| p as u32).sum();
        if total == 0 {
            return 1.0;
        }
        if total % 2 == 1 {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(&e) {
            return v;
        }
        let i = e.iter().position(|&p| p > 0).expect("nonzero exponent");
        let mut rest = e;
        rest[i] -= 1;
        let mut v = 0.0;
        for j in 0..self.m.nrows() {
            if rest[j] == 0 {
                continue;
            }
            let mij = self.m[(i, j)];
            if mij == 0.0 {
                continue;
            }
            let mut sub = rest;
            sub[j] -= 1;
            v += mij * rest[j] as f64 * self.get(sub);
        }
        self.memo.insert(e, v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn double_factorial(n: i32) -> f64 {
        (1..=n).rev().step_by(2).map(|k| k as f64).product()
    }

    #[test]
    fn univariate_moments() {
        let cov = DMatrix::from_element(1, 1, 2.0);
        for p in [0u8, 2, 4, 6, 8] {
            let v = damped_expectation(&cov, &[0.0], &Poly::monomial(0, p, 1.0)).unwrap();
            let expect = 2f64.powi(p as i32 / 2) * double_factorial(p as i32 - 1);
            assert_relative_eq!(v, expect, max_relative = 1e-13);
        }
        assert_eq!(damped_expectation(&cov, &[0.0], &Poly::monomial(0, 3, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn damping_matches_gaussian_integral() {
        // E[X² e^{−d X²/2}] = √(w/s)·w with w = (1/s + d)⁻¹.
        let (s, d) = (0.7, 1.9);
        let w = 1.0 / (1.0 / s + d);
        let cov = DMatrix::from_element(1, 1, s);
        let v = damped_expectation(&cov, &[d], &Poly::monomial(0, 2, 1.0)).unwrap();
        assert_relative_eq!(v, (w / s).sqrt() * w, max_relative = 1e-14);
    }

    #[test]
    fn bivariate_isserlis() {
        // E[X²Y²] = σx²σy² + 2 c²
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let p = Poly::monomial(0, 2, 1.0).mul(&Poly::monomial(1, 2, 1.0));
        let v = damped_expectation(&cov, &[0.0, 0.0], &p).unwrap();
        assert_relative_eq!(v, 1.5 * 0.8 + 2.0 * 0.16, max_relative = 1e-14);
        // E[X³Y] = 3 σx² c
        let p = Poly::monomial(0, 3, 1.0).mul(&Poly::monomial(1, 1, 1.0));
        let v = damped_expectation(&cov, &[0.0, 0.0], &p).unwrap();
        assert_relative_eq!(v, 3.0 * 1.5 * 0.4, max_relative = 1e-14);
    }

    #[test]
    fn damped_bivariate_matches_quadrature() {
        let (s11, s12, s22) = (0.9, 0.35, 0.6);
        let d = [1.2, 0.0];
        let cov = DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]);
        let p = Poly::monomial(0, 3, 1.0).mul(&Poly::monomial(1, 1, 1.0)).add(&Poly::monomial(1, 2, -0.5));
        let exact = damped_expectation(&cov, &d, &p).unwrap();
        // Brute-force 2-D midpoint rule.
        let det = s11 * s22 - s12 * s12;
        let (i11, i12, i22) = (s22 / det, -s12 / det, s11 / det);
        let (n, l) = (800, 7.0);
        let hx = 2.0 * l * s11.sqrt() / n as f64;
        let hy = 2.0 * l * s22.sqrt() / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = -l * s11.sqrt() + (i as f64 + 0.5) * hx;
            for j in 0..n {
                let y = -l * s22.sqrt() + (j as f64 + 0.5) * hy;
                let q = i11 * x * x + 2.0 * i12 * x * y + i22 * y * y;
                let dens = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
                acc += (x.powi(3) * y - 0.5 * y * y) * (-0.5 * d[0] * x * x).exp() * dens;
            }
        }
        acc *= hx * hy;
        assert!((acc - exact).abs() < 1e-8, "{acc} vs {exact}");
    }

    #[test]
    fn hermite_orthogonality() {
        let cov = DMatrix::from_element(1, 1, 2.25);
        for m in 0..8 {
            for k in 0..8 {
                let p = hermite(0, m, 1.5).mul(&hermite(0, k, 1.5));
                let v = damped_expectation(&cov, &[0.0], &p).unwrap();
                let expect = if m == k { (1..=m).map(|i| i as f64).product() } else { 0.0 };
                assert!((v - expect).abs() < 1e-9 * (1.0 + expect), "m={m} k={k}: {v}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(damped_expectation(&cov, &[0.0, 0.0], &Poly::constant(1.0)).is_err());
        let cov = DMatrix::from_element(1, 1, 1.0);
        assert!(damped_expectation(&cov, &[0.0], &Poly::monomial(1, 2, 1.0)).is_err());
    }
}

//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier's variant of Kahan compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Table of ln(j!) for j = 0..=max.
#[derive(Debug, Clone)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn new(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        let mut acc = CompensatedSum::new();
        table.push(0.0);
        for j in 1..=max {
            acc.add((j as f64).ln());
            table.push(acc.value());
        }
        LnFactorial { table }
    }

    pub fn get(&self, j: usize) -> f64 {
        self.table[j]
    }

    pub fn ln_binom(&self, n: usize, k: usize) -> f64 {
        debug_assert!(k <= n);
        self.table[n] - self.table[k] - self.table[n - k]
    }
}

/// ln(j!) without a table.
pub fn ln_factorial(j: u64) -> f64 {
    (2..=j).map(|i| (i as f64).ln()).sum()
}

pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// ln Σ exp(x_i), robust to large magnitudes; -inf for an empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: CompensatedSum = xs.iter().map(|x| (x - max).exp()).collect();
    max + s.value().ln()
}

/// exp that returns exactly 0 below e^-700.
pub fn exp_or_zero(x: f64) -> f64 {
    if x < -700.0 {
        0.0
    } else {
        x.exp()
    }
}

/// `base^exp` for a nonnegative integer exponent with 0^0 = 1.
pub fn powi_u(base: f64, exp: u64) -> f64 {
    if exp == 0 {
        1.0
    } else if exp <= i32::MAX as u64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp as f64)
    }
}

/// Outcome of a symmetric positive-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdCheck {
    pub cholesky_ok: bool,
    pub min_eigenvalue: f64,
    pub norm: f64,
}

impl PdCheck {
    /// Cholesky succeeds and λ_min > 1e-10·‖M‖.
    pub fn is_pd(&self) -> bool {
        self.cholesky_ok && self.min_eigenvalue > 1e-10 * self.norm
    }
}

pub fn pd_check(m: &DMatrix<f64>) -> PdCheck {
    let sym = symmetrize(m);
    let cholesky_ok = sym.clone().cholesky().is_some();
    let eig = sym.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let norm = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    PdCheck {
        cholesky_ok,
        min_eigenvalue,
        norm,
    }
}

pub fn require_pd(m: &DMatrix<f64>, what: &str) -> Result<PdCheck> {
    let check = pd_check(m);
    if check.is_pd() {
        Ok(check)
    } else {
        Err(Error::PdViolation {
            what: what.to_string(),
            min_eigenvalue: check.min_eigenvalue,
        })
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Inverse via LU with partial pivoting; fails on (numerically) singular input.
pub fn inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::SingularMatrix(what))?;
    if inv.iter().any(|x| !x.is_finite()) || reciprocal_condition(m, &inv) < 1e-14 {
        return Err(Error::SingularMatrix(what));
    }
    Ok(inv)
}

/// Solves m·x = b by LU with partial pivoting.
pub fn solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let inv = inverse(m, what)?;
    Ok(inv * b)
}

fn reciprocal_condition(m: &DMatrix<f64>, inv: &DMatrix<f64>) -> f64 {
    let n1 = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let n2 = inv.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if n1 == 0.0 || n2 == 0.0 {
        0.0
    } else {
        1.0 / (n1 * n2 * m.nrows() as f64)
    }
}

/// (sign, ln|det|) from a partially pivoted LU factorisation; `None` if singular.
pub fn log_abs_det(m: DMatrix<f64>) -> Option<(f64, f64)> {
    let n = m.nrows();
    if n == 0 {
        return Some((1.0, 0.0));
    }
    let lu = m.lu();
    let u = lu.u();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut acc = CompensatedSum::new();
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc.add(d.abs().ln());
    }
    Some((sign, acc.value()))
}

pub fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        let s: CompensatedSum = xs.iter().copied().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn ln_factorial_matches_direct() {
        let t = LnFactorial::new(20);
        assert!((t.get(5) - 120f64.ln()).abs() < 1e-14);
        assert!((t.get(20) - ln_factorial(20)).abs() < 1e-12);
        assert!((t.ln_binom(6, 2) - 15f64.ln()).abs() < 1e-13);
        assert_eq!(binomial(6, 2), 15.0);
        assert_eq!(binomial(2, 3), 0.0);
    }

    #[test]
    fn log_det_of_known_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 1.0]);
        let (sign, ld) = log_abs_det(m).unwrap();
        assert_eq!(sign, -1.0);
        assert!((ld - 6f64.ln()).abs() < 1e-14);
        assert!(log_abs_det(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).is_none());
    }

    #[test]
    fn pd_detection() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(pd_check(&pd).is_pd());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!pd_check(&indefinite).is_pd());
        assert!(inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), "m").is_err());
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(powi_u(0.0, 0), 1.0);
    }
}

/// Serialises a vector as a plain list.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, ser: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(de)?))
    }
}

/// Serialises a matrix as a list of rows.
pub mod serde_mat {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

//! Model definition, validation, the Perron root, the characteristic (dual)
//! equation and the moment condition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue, Warning};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const DEFAULT_EPS_CRIT: f64 = 1e-6;
pub const SIGMA_REL_TOL: f64 = 1e-12;
pub const SIGMA_MAX_ITER: usize = 100_000;
pub const DUAL_MAX_ITER: usize = 10_000_000;
pub const DEFAULT_DUAL_TOL: f64 = 1e-14;

/// A model as supplied by the user (e.g. read from a config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "types")]
    pub type_labels: Vec<String>,
    pub kappa: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub n: u64,
    /// Explicit per-type vertex counts; derived from `mu` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
}

impl ModelSpec {
    pub fn new(kappa: Vec<Vec<f64>>, mu: Vec<f64>, n: u64) -> Self {
        let type_labels = (0..mu.len()).map(|i| format!("t{i}")).collect();
        ModelSpec {
            type_labels,
            kappa,
            mu,
            n,
            counts: None,
        }
    }

    pub fn single_type(kappa: f64, n: u64) -> Self {
        ModelSpec::new(vec![vec![kappa]], vec![1.0], n)
    }
}

/// A model that passed validation, with integer per-type vertex counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedModel {
    labels: Vec<String>,
    #[serde(with = "crate::numeric::serde_mat")]
    kappa: DMatrix<f64>,
    #[serde(with = "crate::numeric::serde_vec")]
    mu: DVector<f64>,
    counts: Vec<u64>,
    n: u64,
}

pub fn validate_model(spec: &ModelSpec) -> Result<ValidatedModel> {
    let d = spec.mu.len();
    let mut issues = Vec::new();
    if d == 0 {
        issues.push(ValidationIssue::DimensionMismatch("no types".into()));
        return Err(Error::Validation(issues));
    }
    if spec.type_labels.len() != d {
        issues.push(ValidationIssue::DimensionMismatch(format!(
            "{} labels for {d} types",
            spec.type_labels.len()
        )));
    }
    if spec.kappa.len() != d || spec.kappa.iter().any(|row| row.len() != d) {
        issues.push(ValidationIssue::DimensionMismatch(format!(
            "kappa must be {d}x{d}"
        )));
        return Err(Error::Validation(issues));
    }
    if spec.n == 0 {
        issues.push(ValidationIssue::DimensionMismatch("n must be positive".into()));
    }
    for r in 0..d {
        for s in 0..d {
            let v = spec.kappa[r][s];
            if !(v > 0.0 && v.is_finite()) {
                issues.push(ValidationIssue::NonPositiveEntry {
                    what: "kappa".into(),
                    index: r * d + s,
                    value: v,
                });
            }
            if s > r && (v - spec.kappa[s][r]).abs() > SYMMETRY_TOL {
                issues.push(ValidationIssue::NonSymmetricKernel {
                    row: r,
                    col: s,
                    upper: v,
                    lower: spec.kappa[s][r],
                });
            }
        }
    }
    for (i, &m) in spec.mu.iter().enumerate() {
        if !(m > 0.0 && m.is_finite()) {
            issues.push(ValidationIssue::NonPositiveEntry {
                what: "mu".into(),
                index: i,
                value: m,
            });
        }
    }
    let sum: f64 = spec.mu.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        issues.push(ValidationIssue::MeasureNotNormalized { sum });
    }
    let counts = match &spec.counts {
        Some(c) => {
            if c.len() != d {
                issues.push(ValidationIssue::DimensionMismatch(format!(
                    "{} counts for {d} types",
                    c.len()
                )));
            }
            let total: u64 = c.iter().sum();
            if total != spec.n {
                issues.push(ValidationIssue::CountMismatch {
                    sum: total,
                    n: spec.n,
                });
            }
            c.clone()
        }
        None => integerize(&spec.mu, spec.n),
    };
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    // Symmetrise exactly so downstream symmetric algorithms see a symmetric matrix.
    let kappa = DMatrix::from_fn(d, d, |r, s| 0.5 * (spec.kappa[r][s] + spec.kappa[s][r]));
    Ok(ValidatedModel {
        labels: spec.type_labels.clone(),
        kappa,
        mu: DVector::from_column_slice(&spec.mu),
        counts,
        n: spec.n,
    })
}

/// Largest-remainder rounding of μ·n to integers summing to n.
pub fn integerize(mu: &[f64], n: u64) -> Vec<u64> {
    let scaled: Vec<f64> = mu.iter().map(|m| m * n as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|x| x.floor().max(0.0) as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= n {
        for &i in order.iter().cycle().take((n - assigned) as usize) {
            counts[i] += 1;
        }
    } else {
        let mut excess = assigned - n;
        for &i in order.iter().rev().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

impl ValidatedModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kappa(&self) -> &DMatrix<f64> {
        &self.kappa
    }

    /// The limiting type measure μ.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// Integer vertex counts μⁿ_i·n.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// The realised finite-n measure μⁿ = counts / n.
    pub fn mu_n(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.counts.iter().map(|&c| c as f64 / self.n as f64),
        )
    }

    /// Same model with μ replaced by the realised μⁿ.
    pub fn with_realized_measure(&self) -> ValidatedModel {
        ValidatedModel {
            mu: self.mu_n(),
            ..self.clone()
        }
    }

    /// Same kernel and measure on a different number of vertices.
    pub fn with_n(&self, n: u64) -> ValidatedModel {
        ValidatedModel {
            counts: integerize(self.mu.as_slice(), n),
            n,
            ..self.clone()
        }
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa.iter().copied().fold(0.0, f64::max)
    }

    /// Edge probability between types r and s, min(1, κ(r,s)/n).
    pub fn edge_prob(&self, r: usize, s: usize) -> f64 {
        (self.kappa[(r, s)] / self.n as f64).min(1.0)
    }

    pub fn clamping_warning(&self) -> Option<Warning> {
        let ratio = self.kappa_max() / self.n as f64;
        (ratio >= 1.0).then_some(Warning::EdgeProbabilityClamped { max_ratio: ratio })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            type_labels: self.labels.clone(),
            kappa: (0..self.dim())
                .map(|r| (0..self.dim()).map(|s| self.kappa[(r, s)]).collect())
                .collect(),
            mu: self.mu.iter().copied().collect(),
            n: self.n,
            counts: Some(self.counts.clone()),
        }
    }

    /// Relabel types by `perm` (new type i is old type perm[i]).
    pub fn permuted(&self, perm: &[usize]) -> ValidatedModel {
        let d = self.dim();
        ValidatedModel {
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            kappa: DMatrix::from_fn(d, d, |r, s| self.kappa[(perm[r], perm[s])]),
            mu: DVector::from_iterator(d, perm.iter().map(|&p| self.mu[p])),
            counts: perm.iter().map(|&p| self.counts[p]).collect(),
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    NearCritical,
    Supercritical,
}

impl Regime {
    pub fn classify(sigma: f64, eps_crit: f64) -> Regime {
        if sigma < 1.0 - eps_crit {
            Regime::Subcritical
        } else if sigma > 1.0 + eps_crit {
            Regime::Supercritical
        } else {
            Regime::NearCritical
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub sigma: f64,
    pub regime: Regime,
    pub kappa_sup: f64,
    pub moment_condition_ok: bool,
    pub moment_margin: f64,
}

pub fn criticality(model: &ValidatedModel, eps_crit: f64) -> Result<CriticalityReport> {
    let sigma = sigma(model)?;
    let ks = kappa_sup(model)?;
    let mc = moment_condition(sigma, ks.value);
    Ok(CriticalityReport {
        sigma,
        regime: Regime::classify(sigma, eps_crit),
        kappa_sup: ks.value,
        moment_condition_ok: mc.holds,
        moment_margin: mc.margin,
    })
}

/// Perron root of κ·D_μ by power iteration from the all-ones vector.
pub fn sigma(model: &ValidatedModel) -> Result<f64> {
    perron_root(&(model.kappa() * DMatrix::from_diagonal(model.mu())))
}

/// Perron root of an entrywise nonnegative matrix with positive Perron vector.
pub fn perron_root(m: &DMatrix<f64>) -> Result<f64> {
    let d = m.nrows();
    let mut v = DVector::from_element(d, 1.0 / d as f64);
    let mut lambda = f64::NAN;
    for _ in 0..SIGMA_MAX_ITER {
        let w = m * &v;
        let norm: f64 = w.iter().map(|x| x.abs()).sum();
        if norm == 0.0 {
            return Ok(0.0);
        }
        // v has unit l1 norm, so ‖Mv‖₁ is the eigenvalue estimate.
        let next = norm;
        let converged = (next - lambda).abs() <= SIGMA_REL_TOL * next;
        lambda = next;
        v = w / norm;
        if converged {
            return Ok(lambda);
        }
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: SIGMA_MAX_ITER,
    })
}

/// Solution of c_i e^{-(κc)_i} = μ_i e^{-(κμ)_i}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    #[serde(with = "crate::numeric::serde_vec")]
    pub c: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub is_trivial: bool,
    pub sigma: f64,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

impl DualSolution {
    /// q = |c| − ½⟨c, κc⟩.
    pub fn q(&self, kappa: &DMatrix<f64>) -> f64 {
        self.c.sum() - 0.5 * self.c.dot(&(kappa * &self.c))
    }
}

pub fn dual_residual(model: &ValidatedModel, c: &DVector<f64>) -> f64 {
    let kc = model.kappa() * c;
    let kmu = model.kappa() * model.mu();
    (0..model.dim())
        .map(|i| (c[i] * (-kc[i]).exp() - model.mu()[i] * (-kmu[i]).exp()).abs())
        .fold(0.0, f64::max)
}

/// Minimal fixed point of F(c) = μ ∘ exp(−κ(μ − c)) reached from c = 0.
pub fn solve_dual(model: &ValidatedModel, tol: f64) -> Result<DualSolution> {
    solve_dual_with(model, tol, DEFAULT_EPS_CRIT)
}

pub fn solve_dual_with(model: &ValidatedModel, tol: f64, eps_crit: f64) -> Result<DualSolution> {
    let sigma = sigma(model)?;
    let regime = Regime::classify(sigma, eps_crit);
    let mu = model.mu();
    let kappa = model.kappa();
    let mut c = DVector::zeros(model.dim());
    let mut iterations = 0;
    loop {
        if iterations >= DUAL_MAX_ITER {
            return Err(Error::NoConvergence {
                what: "dual fixed-point iteration",
                iterations,
            });
        }
        let gap = mu - &c;
        let kg = kappa * gap;
        let next = DVector::from_iterator(
            model.dim(),
            (0..model.dim()).map(|i| mu[i] * (-kg[i]).exp()),
        );
        iterations += 1;
        // The map is monotone, so iterates from 0 never decrease.
        assert!(
            next.iter().zip(c.iter()).all(|(a, b)| *a >= *b - 1e-15),
            "dual iteration lost monotonicity"
        );
        let step = (&next - &c).amax();
        c = next;
        if step < tol {
            break;
        }
    }
    let mut warnings = Vec::new();
    if regime == Regime::NearCritical {
        warnings.push(Warning::NearCritical { sigma });
    }
    let is_trivial = regime == Regime::Subcritical;
    if is_trivial {
        c = mu.clone();
    } else if regime == Regime::Supercritical {
        let dual_root = perron_root(&(kappa * DMatrix::from_diagonal(&c)))?;
        assert!(
            dual_root < 1.0,
            "Perron root of kappa*D_c is {dual_root}, expected < 1"
        );
    }
    let residual = dual_residual(model, &c);
    Ok(DualSolution {
        c,
        residual,
        iterations,
        is_trivial,
        sigma,
        regime,
        warnings,
    })
}

/// sup of ⟨ν, κν⟩ over the probability simplex, with the maximiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSup {
    pub value: f64,
    pub argmax: Vec<f64>,
}

pub const KAPPA_SUP_MAX_DIM: usize = 6;

pub fn kappa_sup(model: &ValidatedModel) -> Result<KappaSup> {
    kappa_sup_of(model.kappa())
}

pub fn kappa_sup_of(kappa: &DMatrix<f64>) -> Result<KappaSup> {
    let d = kappa.nrows();
    if d > KAPPA_SUP_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            what: "kappa_sup",
            dim: d,
            max: KAPPA_SUP_MAX_DIM,
        });
    }
    let quad = |nu: &[f64]| -> f64 {
        let mut acc = 0.0;
        for r in 0..d {
            for s in 0..d {
                acc += nu[r] * kappa[(r, s)] * nu[s];
            }
        }
        acc
    };
    if d == 1 {
        return Ok(KappaSup {
            value: kappa[(0, 0)],
            argmax: vec![1.0],
        });
    }
    if d == 2 {
        // f(t) = a t² + 2b t(1−t) + e (1−t)², maximised over [0,1].
        let (a, b, e) = (kappa[(0, 0)], kappa[(0, 1)], kappa[(1, 1)]);
        let mut cands = vec![0.0, 1.0];
        let curv = a - 2.0 * b + e;
        if curv != 0.0 {
            let t = (e - b) / curv;
            if (0.0..=1.0).contains(&t) {
                cands.push(t);
            }
        }
        let (value, t) = cands
            .into_iter()
            .map(|t| (quad(&[t, 1.0 - t]), t))
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .expect("nonempty");
        return Ok(KappaSup {
            value,
            argmax: vec![t, 1.0 - t],
        });
    }
    // Grid over the simplex (1/200 for d = 3, coarser above), then pairwise
    // exact line maximisation from the best grid point.
    let steps: u32 = if d == 3 { 200 } else { 20 };
    let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
    for m in crate::typevec::shell(d, steps) {
        let nu: Vec<f64> = m.counts().iter().map(|&x| x as f64 / steps as f64).collect();
        let v = quad(&nu);
        if v > best.0 {
            best = (v, nu);
        }
    }
    let mut nu = best.1;
    for _ in 0..1000 {
        let mut improved = false;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                // Move mass t from j to i: ν + t(e_i − e_j), t ∈ [−ν_i, ν_j].
                let mut dir = vec![0.0; d];
                dir[i] = 1.0;
                dir[j] = -1.0;
                let kd: Vec<f64> = (0..d)
                    .map(|r| (0..d).map(|s| kappa[(r, s)] * dir[s]).sum())
                    .collect();
                let lin: f64 = 2.0 * (0..d).map(|r| nu[r] * kd[r]).sum::<f64>();
                let curv: f64 = (0..d).map(|r| dir[r] * kd[r]).sum();
                let (lo, hi) = (-nu[i], nu[j]);
                let mut cands = vec![lo, hi];
                if curv < 0.0 {
                    let t = -lin / (2.0 * curv);
                    if t > lo && t < hi {
                        cands.push(t);
                    }
                }
                let gain = |t: f64| lin * t + curv * t * t;
                let t = cands
                    .into_iter()
                    .max_by(|a, b| gain(*a).total_cmp(&gain(*b)))
                    .expect("nonempty");
                if gain(t) > 1e-15 {
                    nu[i] += t;
                    nu[j] -= t;
                    nu[i] = nu[i].max(0.0);
                    nu[j] = nu[j].max(0.0);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(KappaSup {
        value: quad(&nu),
        argmax: nu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCondition {
    pub holds: bool,
    /// Σ − log Σ − ½[κ] − 1; positive iff the condition holds.
    pub margin: f64,
}

/// The exponential-moment condition Σ − log Σ − ½[κ] > 1.
pub fn moment_condition(sigma: f64, kappa_sup: f64) -> MomentCondition {
    let margin = sigma - sigma.ln() - 0.5 * kappa_sup - 1.0;
    MomentCondition {
        holds: margin > 0.0,
        margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kappa: Vec<Vec<f64>>, mu: Vec<f64>, n: u64) -> ValidatedModel {
        validate_model(&ModelSpec::new(kappa, mu, n)).unwrap()
    }

    #[test]
    fn validation_accepts_one_type() {
        let m = model(vec![vec![2.0]], vec![1.0], 100);
        assert_eq!(m.counts(), &[100]);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let err = validate_model(&ModelSpec::new(
            vec![vec![1.0, 2.0], vec![3.0, 1.0]],
            vec![0.5, 0.5],
            10,
        ))
        .unwrap_err();
        assert!(matches!(&err, Error::Validation(v)
            if matches!(v[0], ValidationIssue::NonSymmetricKernel { .. })));

        let err = validate_model(&ModelSpec::new(
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![0.5, 0.49],
            10,
        ))
        .unwrap_err();
        assert!(matches!(&err, Error::Validation(v)
            if matches!(v[0], ValidationIssue::MeasureNotNormalized { .. })));

        let err = validate_model(&ModelSpec::new(vec![vec![0.0]], vec![1.0], 10)).unwrap_err();
        assert!(matches!(&err, Error::Validation(v)
            if matches!(v[0], ValidationIssue::NonPositiveEntry { .. })));

        let mut spec = ModelSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![0.5, 0.5], 10);
        spec.counts = Some(vec![5, 6]);
        let err = validate_model(&spec).unwrap_err();
        assert!(matches!(&err, Error::Validation(v)
            if matches!(v[0], ValidationIssue::CountMismatch { sum: 11, n: 10 })));
    }

    #[test]
    fn integerization_sums_to_n() {
        assert_eq!(integerize(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 10), vec![4, 3, 3]);
        assert_eq!(integerize(&[0.5, 0.5], 7).iter().sum::<u64>(), 7);
        assert_eq!(integerize(&[0.25, 0.75], 4), vec![1, 3]);
        for n in 1..50 {
            assert_eq!(integerize(&[0.1, 0.2, 0.3, 0.4], n).iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn sigma_small_cases() {
        assert!((sigma(&model(vec![vec![2.0]], vec![1.0], 10)).unwrap() - 2.0).abs() < 1e-12);
        let m = model(vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![0.5, 0.5], 10);
        assert!((sigma(&m).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dual_scalar_cases() {
        let sub = solve_dual(&model(vec![vec![0.5]], vec![1.0], 10), DEFAULT_DUAL_TOL).unwrap();
        assert!(sub.is_trivial);
        assert_eq!(sub.c[0], 1.0);
        assert_eq!(sub.regime, Regime::Subcritical);

        // Bisection oracle for c·e^{−2c} = e^{−2}, c < 1.
        let target = (-2.0f64).exp();
        let (mut lo, mut hi) = (1e-9f64, 0.5f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (-2.0 * mid).exp() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sup = solve_dual(&model(vec![vec![2.0]], vec![1.0], 10), DEFAULT_DUAL_TOL).unwrap();
        assert!((sup.c[0] - lo).abs() < 1e-12, "{} vs {lo}", sup.c[0]);
        assert!((sup.c[0] - 0.20319).abs() < 1e-5);
        assert!(sup.residual < 1e-12);
        assert!(!sup.is_trivial);
    }

    #[test]
    fn dual_two_type_symmetric() {
        let m = model(vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![0.5, 0.5], 10);
        let sol = solve_dual(&m, DEFAULT_DUAL_TOL).unwrap();
        let target = 2.0 * (-2.0f64).exp();
        let (mut lo, mut hi) = (1e-9f64, 0.25f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 4.0 * mid * (-4.0 * mid).exp() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for i in 0..2 {
            assert!((sol.c[i] - lo).abs() < 1e-12);
        }
        assert!((sol.c[0] - 0.101594).abs() < 1e-6);
    }

    #[test]
    fn near_critical_warns() {
        let m = model(vec![vec![1.0]], vec![1.0], 10);
        let sol = solve_dual_with(&m, 1e-6, DEFAULT_EPS_CRIT).unwrap();
        assert_eq!(sol.regime, Regime::NearCritical);
        assert!(matches!(sol.warnings[0], Warning::NearCritical { .. }));
    }

    #[test]
    fn kappa_sup_cases() {
        let one = kappa_sup_of(&DMatrix::from_row_slice(1, 1, &[2.0])).unwrap();
        assert_eq!(one.value, 2.0);
        let sym = kappa_sup_of(&DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0])).unwrap();
        assert!((sym.value - 2.0).abs() < 1e-15);
        assert!((sym.argmax[0] - 0.5).abs() < 1e-15);
        let corner = kappa_sup_of(&DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0])).unwrap();
        assert!((corner.value - 4.0).abs() < 1e-15);
        assert_eq!(corner.argmax, vec![1.0, 0.0]);
        assert!(kappa_sup_of(&DMatrix::from_element(7, 7, 1.0)).is_err());
    }

    #[test]
    fn kappa_sup_three_types_matches_fine_scan() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 2.5, 0.3, 2.5, 0.7, 1.9, 0.3, 1.9, 1.2]);
        let got = kappa_sup_of(&k).unwrap();
        // Independent oracle: exhaustive scan at step 1/1000.
        let steps = 1000;
        let mut best = f64::NEG_INFINITY;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let nu = [
                    a as f64 / steps as f64,
                    b as f64 / steps as f64,
                    (steps - a - b) as f64 / steps as f64,
                ];
                let v: f64 = (0..3)
                    .flat_map(|r| (0..3).map(move |s| (r, s)))
                    .map(|(r, s)| nu[r] * k[(r, s)] * nu[s])
                    .sum();
                best = best.max(v);
            }
        }
        assert!(got.value >= best - 1e-12 && got.value - best < 1e-5);
    }

    #[test]
    fn moment_condition_examples() {
        let m = moment_condition(2.0, 2.0);
        assert!(!m.holds);
        assert!((m.margin - (0.30685281944005 - 1.0)).abs() < 1e-12);
        assert!(moment_condition(6.0, 6.0).holds);
        let weak = moment_condition(0.5, 0.5);
        assert!(!weak.holds);
        assert!((weak.margin + 1.0 - 0.94314718055995).abs() < 1e-12);
    }
}

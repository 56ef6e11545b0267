//! Weighted spanning-tree counts τ(k), cluster weights h(k) and the series
//! identities they satisfy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DualSolution, ValidatedModel};
use crate::numeric::{exp_or_zero, ln_factorial, log_abs_det, CompensatedSum};
use crate::typevec::{shell, TypeVector};

pub const TAU_ENUM_MAX: u64 = 8;

/// log τ(k) by the weighted Matrix-Tree theorem on the |k|-vertex complete graph.
pub fn tau_log(k: &TypeVector, kappa: &DMatrix<f64>) -> Result<f64> {
    tau_log_cofactor(k, kappa, 0)
}

/// Same as [`tau_log`] with row and column `drop` removed from the Laplacian.
pub fn tau_log_cofactor(k: &TypeVector, kappa: &DMatrix<f64>, drop: usize) -> Result<f64> {
    k.require_nonzero()?;
    k.require_dim(kappa.nrows())?;
    let x = k.expand();
    let v = x.len();
    if v == 1 {
        return Ok(0.0);
    }
    let mut lap = DMatrix::zeros(v, v);
    for i in 0..v {
        for j in 0..v {
            if i != j {
                let w = kappa[(x[i], x[j])];
                lap[(i, j)] = -w;
                lap[(i, i)] += w;
            }
        }
    }
    let minor = lap.remove_row(drop).remove_column(drop);
    match log_abs_det(minor) {
        Some((sign, ld)) if sign > 0.0 => Ok(ld),
        _ => Err(Error::SingularLaplacian),
    }
}

/// log τ(k) through the type-level reduction
/// τ(k) = |k|⁻¹ ∏_s (κk)_s^{k_s−1} Σ_i det M⁽ⁱ⁾, M = D_{κk} − κD_k on supp(k),
/// which costs O(|S|³) instead of O(|k|³).
pub fn tau_log_reduced(k: &TypeVector, kappa: &DMatrix<f64>) -> Result<f64> {
    k.require_nonzero()?;
    k.require_dim(kappa.nrows())?;
    let supp: Vec<usize> = (0..k.dim()).filter(|&s| k.get(s) > 0).collect();
    let d = supp.len();
    let kf: Vec<f64> = supp.iter().map(|&s| f64::from(k.get(s))).collect();
    let kk: Vec<f64> = (0..d)
        .map(|a| (0..d).map(|b| kappa[(supp[a], supp[b])] * kf[b]).sum())
        .collect();
    let mut log_prod = CompensatedSum::new();
    for a in 0..d {
        log_prod.add((kf[a] - 1.0) * kk[a].ln());
    }
    let m = DMatrix::from_fn(d, d, |a, b| {
        let diag = if a == b { kk[a] } else { 0.0 };
        diag - kappa[(supp[a], supp[b])] * kf[b]
    });
    let cof: f64 = (0..d)
        .map(|i| m.clone().remove_row(i).remove_column(i).determinant())
        .sum();
    if !(cof > 0.0) {
        return Err(Error::SingularLaplacian);
    }
    Ok(log_prod.value() + cof.ln() - (k.total() as f64).ln())
}

/// τ(k) by decoding every Prüfer sequence into a labelled tree.
pub fn tau_enum(k: &TypeVector, kappa: &DMatrix<f64>) -> Result<f64> {
    k.require_nonzero()?;
    k.require_dim(kappa.nrows())?;
    let v = k.total();
    if v > TAU_ENUM_MAX {
        return Err(Error::TooLarge {
            what: "Pruefer enumeration",
            size: v,
            max: TAU_ENUM_MAX,
        });
    }
    let x = k.expand();
    let v = v as usize;
    if v == 1 {
        return Ok(1.0);
    }
    if v == 2 {
        return Ok(kappa[(x[0], x[1])]);
    }
    let len = v - 2;
    let mut seq = vec![0usize; len];
    let mut total = CompensatedSum::new();
    let mut degree = vec![0usize; v];
    loop {
        total.add(prufer_weight(&seq, &x, kappa, &mut degree));
        // Next sequence in odometer order.
        let mut i = 0;
        while i < len {
            seq[i] += 1;
            if seq[i] < v {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
        if i == len {
            break;
        }
    }
    Ok(total.value())
}

fn prufer_weight(seq: &[usize], x: &[usize], kappa: &DMatrix<f64>, degree: &mut [usize]) -> f64 {
    let v = x.len();
    degree.iter_mut().for_each(|d| *d = 1);
    for &a in seq {
        degree[a] += 1;
    }
    let mut w = 1.0;
    for &a in seq {
        let leaf = (0..v).find(|&j| degree[j] == 1).expect("a leaf exists");
        w *= kappa[(x[leaf], x[a])];
        degree[leaf] -= 1;
        degree[a] -= 1;
    }
    let mut last = (0..v).filter(|&j| degree[j] == 1);
    let (u, t) = (last.next().expect("two left"), last.next().expect("two left"));
    w * kappa[(x[u], x[t])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightForm {
    /// Built from μ and κμ.
    Mu,
    /// Built from the dual solution c and κc.
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterWeight {
    pub log_tau: f64,
    pub log_h: f64,
    pub h: f64,
    pub form: WeightForm,
}

/// h(k) = τ(k) ∏_s (x_s e^{−(κx)_s})^{k_s} / k_s!, with x = μ or x = c.
pub fn h_weight(
    k: &TypeVector,
    kappa: &DMatrix<f64>,
    x: &DVector<f64>,
    form: WeightForm,
) -> Result<ClusterWeight> {
    let log_tau = tau_log_reduced(k, kappa)?;
    let kx = kappa * x;
    let mut acc = CompensatedSum::new();
    acc.add(log_tau);
    for s in 0..k.dim() {
        let ks = k.get(s);
        if ks > 0 {
            acc.add(f64::from(ks) * (x[s].ln() - kx[s]) - ln_factorial(u64::from(ks)));
        }
    }
    let log_h = acc.value();
    Ok(ClusterWeight {
        log_tau,
        log_h,
        h: exp_or_zero(log_h),
        form,
    })
}

/// Both forms of h(k): (μ-form, c-form).
pub fn h_value(
    k: &TypeVector,
    model: &ValidatedModel,
    dual: &DualSolution,
) -> Result<(ClusterWeight, ClusterWeight)> {
    Ok((
        h_weight(k, model.kappa(), model.mu(), WeightForm::Mu)?,
        h_weight(k, model.kappa(), &dual.c, WeightForm::C)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassIdentities {
    pub sum_h: f64,
    #[serde(with = "crate::numeric::serde_vec")]
    pub sum_kh: DVector<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub phi_truncated: DMatrix<f64>,
    pub truncation_radius: u32,
    pub tail_estimate: f64,
}

pub const DECAY_RATIO_MAX: f64 = 0.95;
pub const DECAY_CHECK_SHELL: u32 = 60;
pub const MAX_SHELLS: u32 = 5_000;

/// Per-shell sums of h, k·h and kkᵀh (c-form).
#[derive(Debug, Clone)]
pub struct ShellSums {
    pub m: u32,
    pub h: f64,
    pub kh: DVector<f64>,
    pub kkh: DMatrix<f64>,
    /// Σ |k|² h(k) over the shell; dominates every other shell sum.
    pub envelope: f64,
}

pub fn shell_sums(kappa: &DMatrix<f64>, c: &DVector<f64>, m: u32) -> Result<ShellSums> {
    let d = c.len();
    let mut h = CompensatedSum::new();
    let mut kh = vec![CompensatedSum::new(); d];
    let mut kkh = vec![CompensatedSum::new(); d * d];
    let mut env = CompensatedSum::new();
    for k in shell(d, m) {
        let w = h_weight(&k, kappa, c, WeightForm::C)?.h;
        let kf = k.as_f64();
        h.add(w);
        for r in 0..d {
            kh[r].add(kf[r] * w);
            for s in 0..d {
                kkh[r * d + s].add(kf[r] * kf[s] * w);
            }
        }
        env.add((m as f64).powi(2) * w);
    }
    Ok(ShellSums {
        m,
        h: h.value(),
        kh: DVector::from_iterator(d, kh.iter().map(CompensatedSum::value)),
        kkh: DMatrix::from_fn(d, d, |r, s| kkh[r * d + s].value()),
        envelope: env.value(),
    })
}

/// Tracks geometric decay of a sequence of shell sums and extrapolates the tail.
#[derive(Debug, Clone, Default)]
pub struct TailTracker {
    prev: Option<f64>,
    pub ratio: f64,
    pub tail: f64,
}

impl TailTracker {
    /// Feed the next shell sum; returns the current tail estimate
    /// shell/(1 − ratio), or +∞ while no decay has been observed.
    pub fn push(&mut self, shell: f64) -> f64 {
        self.ratio = match self.prev {
            Some(p) if p > 0.0 => shell / p,
            _ => f64::INFINITY,
        };
        self.prev = Some(shell);
        self.tail = if shell == 0.0 {
            0.0
        } else if self.ratio < 1.0 {
            shell / (1.0 - self.ratio)
        } else {
            f64::INFINITY
        };
        self.tail
    }
}

/// Series evaluation of Σh, Σkh and Φ = Σkkᵀh over shells |k| = 1, 2, …
pub fn mass_identities(model: &ValidatedModel, dual: &DualSolution, tol: f64) -> Result<MassIdentities> {
    series_identities(model.kappa(), &dual.c, tol)
}

pub fn series_identities(kappa: &DMatrix<f64>, c: &DVector<f64>, tol: f64) -> Result<MassIdentities> {
    let d = c.len();
    let mut sum_h = CompensatedSum::new();
    let mut sum_kh = vec![CompensatedSum::new(); d];
    let mut phi = vec![CompensatedSum::new(); d * d];
    let mut tracker = TailTracker::default();
    let mut m = 0;
    loop {
        m += 1;
        let s = shell_sums(kappa, c, m)?;
        sum_h.add(s.h);
        for r in 0..d {
            sum_kh[r].add(s.kh[r]);
            for t in 0..d {
                phi[r * d + t].add(s.kkh[(r, t)]);
            }
        }
        let tail = tracker.push(s.envelope);
        if m >= 3 && tail < tol {
            break;
        }
        if m >= DECAY_CHECK_SHELL && !(tracker.ratio < DECAY_RATIO_MAX) {
            return Err(Error::NoDecay {
                what: "cluster-weight shell sums",
                shell: m as usize,
                ratio: tracker.ratio,
            });
        }
        if m >= MAX_SHELLS {
            return Err(Error::NoConvergence {
                what: "cluster-weight shell sums",
                iterations: m as usize,
            });
        }
    }
    let phi = DMatrix::from_fn(d, d, |r, s| phi[r * d + s].value());
    Ok(MassIdentities {
        sum_h: sum_h.value(),
        sum_kh: DVector::from_iterator(d, sum_kh.iter().map(CompensatedSum::value)),
        phi_truncated: crate::numeric::symmetrize(&phi),
        truncation_radius: m,
        tail_estimate: tracker.tail,
    })
}

/// Φ = (D_c⁻¹ − κ)⁻¹.
pub fn phi_closed(kappa: &DMatrix<f64>, c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_diagonal(&c.map(|x| 1.0 / x)) - kappa;
    let inv = crate::numeric::inverse(&m, "D_c^-1 - kappa")?;
    Ok(crate::numeric::symmetrize(&inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{solve_dual, validate_model, ModelSpec, DEFAULT_DUAL_TOL};
    use proptest::prelude::*;

    fn tv(v: &[u32]) -> TypeVector {
        TypeVector::new(v.to_vec())
    }

    fn mat(d: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(d, d, v)
    }

    #[test]
    fn tau_small_cases() {
        let k2 = mat(2, &[1.3, 0.7, 0.7, 2.1]);
        assert!((tau_log(&tv(&[1, 1]), &k2).unwrap() - 0.7f64.ln()).abs() < 1e-14);
        assert_eq!(tau_log(&tv(&[0, 1]), &k2).unwrap(), 0.0);
        let one = mat(1, &[1.0]);
        assert!((tau_log(&tv(&[4]), &one).unwrap() - 16f64.ln()).abs() < 1e-13);
        let (a, b) = (1.7, 0.4);
        let sym = mat(2, &[a, b, b, a]);
        let want = (2.0 * a * b + b * b).ln();
        assert!((tau_log(&tv(&[2, 1]), &sym).unwrap() - want).abs() < 1e-13);
        assert!((tau_log_reduced(&tv(&[2, 1]), &sym).unwrap() - want).abs() < 1e-13);
        assert!(tau_log(&tv(&[0, 0]), &sym).is_err());
    }

    #[test]
    fn tau_enum_small_cases() {
        assert!((tau_enum(&tv(&[3]), &mat(1, &[2.0])).unwrap() - 12.0).abs() < 1e-12);
        assert!((tau_enum(&tv(&[1, 1, 1]), &DMatrix::from_element(3, 3, 1.0)).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            tau_enum(&tv(&[9]), &mat(1, &[1.0])),
            Err(Error::TooLarge { .. })
        ));
        // Cayley for |k| = 8.
        let t = tau_enum(&tv(&[8]), &mat(1, &[1.0])).unwrap();
        assert_eq!(t, 8f64.powi(6));
    }

    #[test]
    fn h_examples() {
        let kappa = mat(1, &[0.5]);
        let mu = DVector::from_element(1, 1.0);
        let h1 = h_weight(&tv(&[1]), &kappa, &mu, WeightForm::Mu).unwrap();
        assert!((h1.h - (-0.5f64).exp()).abs() < 1e-15);
        let h2 = h_weight(&tv(&[2]), &kappa, &mu, WeightForm::Mu).unwrap();
        assert!((h2.h - 0.5 * (-1.0f64).exp() / 2.0).abs() < 1e-15);
        assert!((h2.h - 0.09197).abs() < 1e-5);
    }

    #[test]
    fn mu_form_equals_c_form_when_supercritical() {
        let m = validate_model(&ModelSpec::new(
            vec![vec![1.0, 3.0], vec![3.0, 1.0]],
            vec![0.5, 0.5],
            10,
        ))
        .unwrap();
        let dual = solve_dual(&m, DEFAULT_DUAL_TOL).unwrap();
        for k in [[1u32, 0], [2, 3], [4, 1], [5, 5]] {
            let (a, b) = h_value(&tv(&k), &m, &dual).unwrap();
            assert!((a.h - b.h).abs() <= 1e-12 * a.h.max(1e-300), "{k:?}");
        }
    }

    #[test]
    fn identities_for_subcritical_single_type() {
        let kappa = mat(1, &[0.5]);
        let c = DVector::from_element(1, 1.0);
        let ids = series_identities(&kappa, &c, 1e-8).unwrap();
        assert!((ids.sum_h - 0.75).abs() <= ids.tail_estimate);
        assert!((ids.sum_kh[0] - 1.0).abs() <= ids.tail_estimate);
        assert!((ids.phi_truncated[(0, 0)] - 2.0).abs() <= ids.tail_estimate);
        assert!((phi_closed(&kappa, &c).unwrap()[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn phi_closed_scalar_supercritical() {
        let m = validate_model(&ModelSpec::single_type(2.0, 10)).unwrap();
        let dual = solve_dual(&m, DEFAULT_DUAL_TOL).unwrap();
        let phi = phi_closed(m.kappa(), &dual.c).unwrap()[(0, 0)];
        assert!((phi - 1.0 / (1.0 / dual.c[0] - 2.0)).abs() < 1e-14);
        assert!((phi - 0.34229).abs() < 1e-5);
    }

    #[test]
    fn no_decay_near_criticality() {
        let kappa = mat(1, &[1.0]);
        let c = DVector::from_element(1, 1.0);
        assert!(matches!(
            series_identities(&kappa, &c, 1e-12),
            Err(Error::NoDecay { .. })
        ));
    }

    fn kernel(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(0.1f64..3.0, d * d).prop_map(move |v| {
            DMatrix::from_fn(d, d, |r, s| v[r.min(s) * d + r.max(s)])
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn matrix_tree_matches_pruefer(kappa in kernel(3), a in 0u32..3, b in 0u32..3, c in 0u32..2) {
            let k = tv(&[a, b, c]);
            prop_assume!(!k.is_zero());
            let e = tau_enum(&k, &kappa).unwrap();
            let l = tau_log(&k, &kappa).unwrap().exp();
            let r = tau_log_reduced(&k, &kappa).unwrap().exp();
            prop_assert!((l - e).abs() <= 1e-10 * e);
            prop_assert!((r - e).abs() <= 1e-10 * e);
        }

        #[test]
        fn cofactor_invariance(kappa in kernel(2), a in 1u32..5, b in 0u32..5, drop in 0usize..9) {
            let k = tv(&[a, b]);
            let drop = drop % (a + b) as usize;
            let base = tau_log(&k, &kappa).unwrap();
            let other = tau_log_cofactor(&k, &kappa, drop).unwrap();
            prop_assert!((base - other).abs() < 1e-10 * base.abs().max(1.0));
        }

        #[test]
        fn permutation_equivariance(kappa in kernel(3), a in 0u32..6, b in 0u32..6, c in 1u32..6) {
            let perm = [2usize, 0, 1];
            let k = [a, b, c];
            let pk = tv(&[k[perm[0]], k[perm[1]], k[perm[2]]]);
            let pkappa = DMatrix::from_fn(3, 3, |r, s| kappa[(perm[r], perm[s])]);
            let mu = DVector::from_vec(vec![0.2, 0.3, 0.5]);
            let pmu = DVector::from_fn(3, |r, _| mu[perm[r]]);
            let h = h_weight(&tv(&k), &kappa, &mu, WeightForm::Mu).unwrap();
            let ph = h_weight(&pk, &pkappa, &pmu, WeightForm::Mu).unwrap();
            prop_assert!((h.log_h - ph.log_h).abs() < 1e-10 * h.log_h.abs().max(1.0));
        }
    }
}

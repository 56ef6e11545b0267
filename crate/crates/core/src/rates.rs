//! Quadratic rate functions of the moderate-deviation principles, the
//! matrices they are built from, predicted CLT-scale covariances and the
//! cumulant-generating-function expansion check.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DualSolution, Regime, ValidatedModel};
use crate::numeric::{inverse, pd_check, symmetrize, CompensatedSum, PdCheck};
use crate::tree::{h_weight, phi_closed, WeightForm};
use crate::typevec::TypeVector;

/// Matrices available in both non-critical regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualMatrices {
    #[serde(with = "crate::numeric::serde_mat")]
    pub kappa: DMatrix<f64>,
    #[serde(with = "crate::numeric::serde_vec")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::numeric::serde_vec")]
    pub c: DVector<f64>,
    /// q = |c| − ½⟨c, κc⟩.
    pub q: f64,
    /// Φ = (D_c⁻¹ − κ)⁻¹.
    #[serde(with = "crate::numeric::serde_mat")]
    pub phi: DMatrix<f64>,
    pub regime: Regime,
    pub sigma: f64,
}

impl DualMatrices {
    pub fn new(model: &ValidatedModel, dual: &DualSolution) -> Result<DualMatrices> {
        if dual.regime == Regime::NearCritical {
            return Err(Error::NearCritical { sigma: dual.sigma });
        }
        Ok(DualMatrices {
            kappa: model.kappa().clone(),
            mu: model.mu().clone(),
            c: dual.c.clone(),
            q: dual.q(model.kappa()),
            phi: phi_closed(model.kappa(), &dual.c)?,
            regime: dual.regime,
            sigma: dual.sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// D_c⁻¹ − κ.
    pub fn phi_inv(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.c.map(|x| 1.0 / x)) - &self.kappa
    }

    /// h(k) in μ-form.
    pub fn h(&self, k: &TypeVector) -> Result<f64> {
        Ok(h_weight(k, &self.kappa, &self.mu, WeightForm::Mu)?.h)
    }

    /// det(I − Φ⁻¹ccᵀ/q) and its closed form ½⟨c,κc⟩/q.
    pub fn det_identity(&self) -> (f64, f64) {
        let d = self.dim();
        let cc = &self.c * self.c.transpose() / self.q;
        let det = (DMatrix::<f64>::identity(d, d) - self.phi_inv() * cc).determinant();
        (det, 0.5 * self.c.dot(&(&self.kappa * &self.c)) / self.q)
    }

    /// Φ − k kᵀ h(k).
    pub fn phi_minus_k(&self, k: &TypeVector) -> Result<(f64, DMatrix<f64>)> {
        k.require_nonzero()?;
        k.require_dim(self.dim())?;
        let h = self.h(k)?;
        let kv = DVector::from_vec(k.as_f64());
        Ok((h, &self.phi - &kv * kv.transpose() * h))
    }
}

/// Everything needed for the supercritical rate functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateContext {
    pub base: DualMatrices,
    #[serde(with = "crate::numeric::serde_vec")]
    pub v: DVector<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub d_v: DMatrix<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub a0: DMatrix<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub a: DMatrix<f64>,
    /// B = (Φ − ccᵀ/q)⁻¹.
    #[serde(with = "crate::numeric::serde_mat")]
    pub b: DMatrix<f64>,
    /// (I − κD_c) D_v (I − D_cκ).
    #[serde(with = "crate::numeric::serde_mat")]
    pub giant_form: DMatrix<f64>,
    pub giant_form_pd: PdCheck,
    pub a_plus_b_pd: PdCheck,
    pub phi_pd: PdCheck,
    pub b_pd: PdCheck,
    /// det(I − Φ⁻¹ccᵀ/q) and the closed form ½⟨c,κc⟩/q.
    pub det_identity: (f64, f64),
}

pub fn build_context(model: &ValidatedModel, dual: &DualSolution) -> Result<RateContext> {
    if dual.regime == Regime::NearCritical {
        return Err(Error::NearCritical { sigma: dual.sigma });
    }
    if dual.regime != Regime::Supercritical {
        return Err(Error::NotSupercritical { sigma: dual.sigma });
    }
    let base = DualMatrices::new(model, dual)?;
    let d = base.dim();
    let (kappa, mu, c, q) = (&base.kappa, &base.mu, &base.c, base.q);
    let id = DMatrix::<f64>::identity(d, d);
    let gap = mu - c;
    let v = DVector::from_fn(d, |i, _| mu[i] / (c[i] * gap[i]));
    let d_v = DMatrix::from_diagonal(&v);
    let d_c = DMatrix::from_diagonal(c);
    let d_mu = DMatrix::from_diagonal(mu);
    let a0 = (&id - kappa * &d_c) * DMatrix::from_diagonal(&gap.map(|x| 1.0 / x)) * (&id - &d_mu * kappa);
    let a = symmetrize(&a0);
    let cc = c * c.transpose() / q;
    let b = symmetrize(&inverse(&(&base.phi - &cc), "Phi - cc^T/q")?);
    let giant_form = symmetrize(&((&id - kappa * &d_c) * &d_v * (&id - &d_c * kappa)));
    let det_identity = base.det_identity();
    let ctx = RateContext {
        giant_form_pd: pd_check(&giant_form),
        a_plus_b_pd: pd_check(&(&a + &b)),
        phi_pd: pd_check(&base.phi),
        b_pd: pd_check(&b),
        base,
        v,
        d_v,
        a0,
        a,
        b,
        giant_form,
        det_identity,
    };
    for (what, check) in [
        ("(I - kappa D_c) D_v (I - D_c kappa)", &ctx.giant_form_pd),
        ("A + B", &ctx.a_plus_b_pd),
        ("Phi", &ctx.phi_pd),
        ("B", &ctx.b_pd),
    ] {
        if !check.is_pd() {
            return Err(Error::PdViolation {
                what: what.to_string(),
                min_eigenvalue: check.min_eigenvalue,
            });
        }
    }
    Ok(ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRateContext {
    pub k: TypeVector,
    pub h: f64,
    /// B_k = (Φ − kkᵀh(k))⁻¹.
    #[serde(with = "crate::numeric::serde_mat")]
    pub b_k: DMatrix<f64>,
    /// kᵀ(D_μ⁻¹ − κ)k · h(k) < 1.
    pub pd_condition: bool,
    pub pd_condition_value: f64,
    pub apbk: PdCheck,
}

impl KRateContext {
    pub fn apbk_pd(&self) -> bool {
        self.apbk.is_pd()
    }
}

pub fn build_k_context(ctx: &RateContext, k: &TypeVector) -> Result<KRateContext> {
    let (h, m) = ctx.base.phi_minus_k(k)?;
    let b_k = symmetrize(&inverse(&m, "Phi - kk^T h(k)")?);
    let kv = DVector::from_vec(k.as_f64());
    let d_mu_inv = DMatrix::from_diagonal(&ctx.base.mu.map(|x| 1.0 / x));
    let cond = kv.dot(&((d_mu_inv - &ctx.base.kappa) * &kv)) * h;
    let apbk = pd_check(&(&ctx.a + &b_k));
    let out = KRateContext {
        k: k.clone(),
        h,
        b_k,
        pd_condition: cond < 1.0,
        pd_condition_value: cond,
        apbk,
    };
    assert!(
        !out.pd_condition || out.apbk_pd(),
        "A + B_k not positive definite although the sufficient condition holds (k = {k})"
    );
    Ok(out)
}

fn positive(what: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NegativeRateCoefficient {
            what: what.to_string(),
            value,
        })
    }
}

/// kᵀ A (A + B_k)⁻¹ B_k k.
fn apbk_term(ctx: &RateContext, kc: &KRateContext) -> Result<f64> {
    let kv = DVector::from_vec(kc.k.as_f64());
    let inv = inverse(&(&ctx.a + &kc.b_k), "A + B_k")?;
    Ok(kv.dot(&(&ctx.a * inv * &kc.b_k * &kv)))
}

/// I(x) = ½⟨(I − D_cκ)x, D_v(I − D_cκ)x⟩.
pub fn rate_i_giant(ctx: &RateContext, x: &DVector<f64>) -> f64 {
    let d = ctx.base.dim();
    let y = (DMatrix::identity(d, d) - DMatrix::from_diagonal(&ctx.base.c) * &ctx.base.kappa) * x;
    0.5 * y.dot(&(&ctx.d_v * &y))
}

/// Quadratic coefficient of J_k: 1/h(k) − kᵀA(A+B_k)⁻¹B_k k.
pub fn j_coefficient(ctx: &RateContext, kc: &KRateContext) -> Result<f64> {
    if !kc.apbk_pd() {
        return Err(Error::PdViolation {
            what: format!("A + B_k for k = {}", kc.k),
            min_eigenvalue: kc.apbk.min_eigenvalue,
        });
    }
    positive(&format!("J_k for k = {}", kc.k), 1.0 / kc.h - apbk_term(ctx, kc)?)
}

/// J_k(x) = x²/2 · (1/h(k) − kᵀA(A+B_k)⁻¹B_k k).
pub fn rate_j(ctx: &RateContext, kc: &KRateContext, x: f64) -> Result<f64> {
    Ok(0.5 * x * x * j_coefficient(ctx, kc)?)
}

/// Quadratic coefficient of J'_k: 1/h(k) − kᵀ(Φ − kkᵀh(k))⁻¹k.
pub fn j_sub_coefficient(base: &DualMatrices, k: &TypeVector) -> Result<f64> {
    require_subcritical(base)?;
    let (h, m) = base.phi_minus_k(k)?;
    let kv = DVector::from_vec(k.as_f64());
    let inv = inverse(&m, "Phi - kk^T h(k)")?;
    positive(&format!("J'_k for k = {k}"), 1.0 / h - kv.dot(&(inv * &kv)))
}

pub fn rate_j_sub(base: &DualMatrices, k: &TypeVector, x: f64) -> Result<f64> {
    Ok(0.5 * x * x * j_sub_coefficient(base, k)?)
}

/// Quadratic coefficient of i: 1/q + cᵀA(A+B)⁻¹Bc / q².
pub fn i_coefficient(ctx: &RateContext) -> Result<f64> {
    let c = &ctx.base.c;
    let q = ctx.base.q;
    let inv = inverse(&(&ctx.a + &ctx.b), "A + B")?;
    let t = c.dot(&(&ctx.a * inv * &ctx.b * c));
    positive("i", 1.0 / q + t / (q * q))
}

/// i(x) = x²/(2q) + ½(x/q)² cᵀA(A+B)⁻¹Bc.
pub fn rate_i(ctx: &RateContext, x: f64) -> Result<f64> {
    Ok(0.5 * x * x * i_coefficient(ctx)?)
}

/// Quadratic coefficient of i': 2/(2−⟨μ,κμ⟩)·(⟨((2−⟨μ,κμ⟩)Φ − 2μμᵀ)⁻¹μ, μ⟩ − 1).
pub fn i_sub_coefficient(base: &DualMatrices) -> Result<f64> {
    require_subcritical(base)?;
    let mu = &base.mu;
    let s = 2.0 - mu.dot(&(&base.kappa * mu));
    let m = &base.phi * s - mu * mu.transpose() * 2.0;
    let inv = inverse(&m, "(2 - <mu,kappa mu>) Phi - 2 mu mu^T")?;
    positive("i'", 2.0 / s * (mu.dot(&(inv * mu)) - 1.0))
}

pub fn rate_i_sub(base: &DualMatrices, x: f64) -> Result<f64> {
    Ok(0.5 * x * x * i_sub_coefficient(base)?)
}

fn require_subcritical(base: &DualMatrices) -> Result<()> {
    if base.regime != Regime::Subcritical {
        return Err(Error::NotSubcritical { sigma: base.sigma });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CppRate {
    J1,
    J2,
    J3(TypeVector),
}

/// j₁ = ½⟨x,Φ⁻¹x⟩, j₂ = ½⟨x,(Φ−ccᵀ/q)⁻¹x⟩, j₃ = ½⟨x,(Φ−kkᵀh(k))⁻¹x⟩.
pub fn cpp_rates(base: &DualMatrices, which: &CppRate, x: &DVector<f64>) -> Result<f64> {
    let m = match which {
        CppRate::J1 => base.phi_inv(),
        CppRate::J2 => inverse(&(&base.phi - &base.c * base.c.transpose() / base.q), "Phi - cc^T/q")?,
        CppRate::J3(k) => inverse(&base.phi_minus_k(k)?.1, "Phi - kk^T h(k)")?,
    };
    Ok(0.5 * x.dot(&(m * x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCovariances {
    /// [(I − κD_c)D_v(I − D_cκ)]⁻¹.
    #[serde(with = "crate::numeric::serde_mat")]
    pub giant_cov: DMatrix<f64>,
    /// 1 / (J_k quadratic coefficient).
    #[serde(with = "k_map")]
    pub var_t: BTreeMap<TypeVector, f64>,
    /// Diagnostic only: 1 / (1/h(k) + kᵀA(A+B_k)⁻¹B_k k), the variance obtained
    /// by Gaussian conditioning of the jump counts on the terminal sum.
    #[serde(with = "k_map")]
    pub var_t_conditional: BTreeMap<TypeVector, f64>,
    /// 1 / (i quadratic coefficient).
    pub var_cn: f64,
}

pub mod k_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::typevec::TypeVector;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        k: TypeVector,
        value: f64,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<TypeVector, f64>, ser: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, &value)| Entry { k: k.clone(), value })
            .collect::<Vec<_>>()
            .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<TypeVector, f64>, D::Error> {
        Ok(Vec::<Entry>::deserialize(de)?
            .into_iter()
            .map(|e| (e.k, e.value))
            .collect())
    }
}

pub fn predicted_covariances(ctx: &RateContext, ks: &[TypeVector]) -> Result<PredictedCovariances> {
    let giant_cov = symmetrize(&inverse(&ctx.giant_form, "(I - kappa D_c) D_v (I - D_c kappa)")?);
    let mut var_t = BTreeMap::new();
    let mut var_t_conditional = BTreeMap::new();
    for k in ks {
        let kc = build_k_context(ctx, k)?;
        var_t.insert(k.clone(), 1.0 / j_coefficient(ctx, &kc)?);
        var_t_conditional.insert(k.clone(), 1.0 / (1.0 / kc.h + apbk_term(ctx, &kc)?));
    }
    Ok(PredictedCovariances {
        giant_cov,
        var_t,
        var_t_conditional,
        var_cn: 1.0 / i_coefficient(ctx)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgfVariant {
    /// Poisson(λn) many jumps.
    Poisson,
    /// ⌊λn⌋ jumps.
    FixedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgfReport {
    pub variant: CgfVariant,
    pub n: u64,
    pub theta: f64,
    pub a_n: f64,
    pub z: Vec<f64>,
    pub empirical_limit: f64,
    pub predicted: f64,
    pub gap: f64,
    /// 1/aₙ + aₙ/√n.
    pub gap_scale: f64,
}

pub const CGF_OVERFLOW_LIMIT: f64 = 50.0;

/// Exact scaled CGF (1/aₙ²) log E exp{(aₙ/√n)⟨z, S − centering⟩} of a sum of
/// i.i.d. jumps drawn from `table`, against its quadratic limit.
pub fn cgf_check(
    table: &[(TypeVector, f64)],
    lambda: f64,
    n: u64,
    theta: f64,
    z: &DVector<f64>,
    variant: CgfVariant,
) -> Result<CgfReport> {
    if table.is_empty() {
        return Err(Error::PreconditionViolated("empty jump table".into()));
    }
    let d = z.len();
    let nf = n as f64;
    let a_n = nf.powf(theta);
    let scale = a_n / nf.sqrt();
    let total: f64 = table.iter().map(|(_, p)| p).sum();
    let max_arg = table
        .iter()
        .map(|(k, _)| (scale * DVector::from_vec(k.as_f64()).dot(z)).abs())
        .fold(0.0, f64::max);
    if max_arg > CGF_OVERFLOW_LIMIT {
        return Err(Error::OverflowGuard {
            value: max_arg,
            limit: CGF_OVERFLOW_LIMIT,
        });
    }
    let mut m = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (k, p) in table {
        let kv = DVector::from_vec(k.as_f64());
        m += &kv * (p / total);
        second += &kv * kv.transpose() * (p / total);
    }
    let cov = &second - &m * m.transpose();
    // E e^{⟨t,X⟩} − 1 − ⟨t,m⟩ summed without cancellation.
    let mut excess = CompensatedSum::new();
    for (k, p) in table {
        let x = scale * DVector::from_vec(k.as_f64()).dot(z);
        excess.add(p / total * (x.exp_m1() - x));
    }
    let excess = excess.value();
    let tm = scale * m.dot(z);
    let (empirical, predicted) = match variant {
        CgfVariant::Poisson => (
            lambda * nf * excess / (a_n * a_n),
            0.5 * lambda * z.dot(&(&second * z)),
        ),
        CgfVariant::FixedCount => {
            let count = (lambda * nf).floor();
            // log E e^{⟨t,X⟩} − ⟨t,m⟩ = ln(1 + tm + excess) − tm.
            let l = (tm + excess).ln_1p() - tm;
            (count * l / (a_n * a_n), 0.5 * lambda * z.dot(&(&cov * z)))
        }
    };
    Ok(CgfReport {
        variant,
        n,
        theta,
        a_n,
        z: z.iter().copied().collect(),
        empirical_limit: empirical,
        predicted,
        gap: (empirical - predicted).abs(),
        gap_scale: 1.0 / a_n + scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{solve_dual, validate_model, ModelSpec, DEFAULT_DUAL_TOL};

    fn setup(kappa: Vec<Vec<f64>>, mu: Vec<f64>) -> (ValidatedModel, DualSolution) {
        let m = validate_model(&ModelSpec::new(kappa, mu, 100)).unwrap();
        let d = solve_dual(&m, DEFAULT_DUAL_TOL).unwrap();
        (m, d)
    }

    fn tv(v: &[u32]) -> TypeVector {
        TypeVector::new(v.to_vec())
    }

    #[test]
    fn scalar_supercritical_pipeline() {
        let (m, d) = setup(vec![vec![2.0]], vec![1.0]);
        let ctx = build_context(&m, &d).unwrap();
        let c = d.c[0];
        // Independent scalar arithmetic.
        let q = c - c * c;
        let phi = 1.0 / (1.0 / c - 2.0);
        let a = (1.0 - 2.0 * c) * (1.0 - 2.0) / (1.0 - c);
        let b = 1.0 / (phi - c * c / q);
        assert!((ctx.base.phi[(0, 0)] - phi).abs() < 1e-14);
        assert!((ctx.a[(0, 0)] - a).abs() < 1e-13);
        assert!((ctx.b[(0, 0)] - b).abs() < 1e-10);
        assert!((phi - 0.34229).abs() < 1e-5);
        assert!((a + 0.74500).abs() < 1e-5);
        assert!((b - 11.457).abs() < 1e-3);
        let i_coef = 1.0 / q + a * b / (a + b) * (c / q).powi(2);
        assert!((i_coefficient(&ctx).unwrap() - i_coef).abs() < 1e-10);
        let v = 1.0 / (c * (1.0 - c));
        let want = 0.5 * (1.0 - 2.0 * c).powi(2) * v;
        let x = DVector::from_element(1, 1.0);
        assert!((rate_i_giant(&ctx, &x) - want).abs() < 1e-14);
        assert!((want - 1.08828).abs() < 1e-5);
        let (det, closed) = ctx.det_identity;
        assert!((det - closed).abs() < 1e-10);
        let pred = predicted_covariances(&ctx, &[tv(&[1])]).unwrap();
        assert!((pred.giant_cov[(0, 0)] - c * (1.0 - c) / (1.0 - 2.0 * c).powi(2)).abs() < 1e-12);
        assert!((pred.giant_cov[(0, 0)] - 0.459442).abs() < 1e-6);
        // The component-count variance equals c for a single type.
        assert!((pred.var_cn - c).abs() < 1e-12);
    }

    #[test]
    fn isolated_vertex_variances() {
        let (m, d) = setup(vec![vec![2.0]], vec![1.0]);
        let ctx = build_context(&m, &d).unwrap();
        let pred = predicted_covariances(&ctx, &[tv(&[1])]).unwrap();
        // The number of isolated vertices in G(n, κ/n) has variance
        // n(e^{−κ} + (κ−1)e^{−2κ}) to leading order.
        let exact = (-2.0f64).exp() + (-4.0f64).exp();
        assert!((pred.var_t_conditional[&tv(&[1])] - exact).abs() < 1e-12);
        assert!((pred.var_t[&tv(&[1])] - 0.120921).abs() < 1e-6);
    }

    #[test]
    fn subcritical_rates() {
        let (m, d) = setup(vec![vec![0.5]], vec![1.0]);
        let base = DualMatrices::new(&m, &d).unwrap();
        assert!(matches!(build_context(&m, &d), Err(Error::NotSupercritical { .. })));
        let coef = j_sub_coefficient(&base, &tv(&[1])).unwrap();
        let h = (-0.5f64).exp();
        assert!((coef - (1.0 / h - 1.0 / (2.0 - h))).abs() < 1e-14);
        assert!((rate_j_sub(&base, &tv(&[1]), 1.0).unwrap() - 0.46555).abs() < 1e-5);
        assert_eq!(rate_j_sub(&base, &tv(&[1]), 0.0).unwrap(), 0.0);
        let x = DVector::from_element(1, 1.0);
        assert!((cpp_rates(&base, &CppRate::J1, &x).unwrap() - 0.25).abs() < 1e-15);
        let (det, closed) = base.det_identity();
        assert!((det - 1.0 / 3.0).abs() < 1e-14 && (closed - 1.0 / 3.0).abs() < 1e-14);
        // The i' coefficient vanishes identically for a single type.
        assert!(matches!(
            i_sub_coefficient(&base),
            Err(Error::NegativeRateCoefficient { .. })
        ));
    }

    #[test]
    fn two_type_context_is_pd() {
        let (m, d) = setup(vec![vec![1.0, 3.0], vec![3.0, 1.0]], vec![0.5, 0.5]);
        let ctx = build_context(&m, &d).unwrap();
        assert!(ctx.a_plus_b_pd.is_pd() && ctx.giant_form_pd.is_pd());
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let j1a = cpp_rates(&ctx.base, &CppRate::J1, &x).unwrap();
        let j1b = 0.5 * x.dot(&(inverse(&ctx.base.phi, "phi").unwrap() * &x));
        assert!((j1a - j1b).abs() < 1e-12);
        assert!(cpp_rates(&ctx.base, &CppRate::J2, &x).unwrap() > 0.0);
    }

    #[test]
    fn hessians_match_finite_differences() {
        let (m, d) = setup(vec![vec![1.2, 2.9], vec![2.9, 0.8]], vec![0.4, 0.6]);
        let ctx = build_context(&m, &d).unwrap();
        let h = 1e-3;
        let second = |f: &dyn Fn(f64) -> f64| (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        let ic = i_coefficient(&ctx).unwrap();
        assert!((second(&|x| rate_i(&ctx, x).unwrap()) / ic - 1.0).abs() < 1e-6);
        let kc = build_k_context(&ctx, &tv(&[1, 1])).unwrap();
        let jc = j_coefficient(&ctx, &kc).unwrap();
        assert!((second(&|x| rate_j(&ctx, &kc, x).unwrap()) / jc - 1.0).abs() < 1e-6);
        // Mixed partial of the giant rate against the closed-form matrix.
        let e = |i: usize| DVector::from_fn(2, |r, _| if r == i { h } else { 0.0 });
        let f = |x: DVector<f64>| rate_i_giant(&ctx, &x);
        let z = DVector::zeros(2);
        let fd01 = (f(e(0) + e(1)) - f(e(0) - e(1)) - f(-e(0) + e(1)) + f(-e(0) - e(1))) / (4.0 * h * h);
        assert!((fd01 / ctx.giant_form[(0, 1)] - 1.0).abs() < 1e-6);
        assert_eq!(f(z), 0.0);
    }

    #[test]
    fn cgf_small_arguments() {
        let table = vec![(tv(&[1]), 0.7), (tv(&[2]), 0.2), (tv(&[3]), 0.1)];
        let z = DVector::from_element(1, 0.0);
        let r = cgf_check(&table, 0.75, 100_000, 0.25, &z, CgfVariant::Poisson).unwrap();
        assert_eq!((r.empirical_limit, r.predicted), (0.0, 0.0));
        let z = DVector::from_element(1, 0.3);
        let p = cgf_check(&table, 0.75, 100_000, 0.25, &z, CgfVariant::Poisson).unwrap();
        let f = cgf_check(&table, 0.75, 100_000, 0.25, &z, CgfVariant::FixedCount).unwrap();
        assert!(p.gap <= 3.0 * p.gap_scale && f.gap <= 3.0 * f.gap_scale);
        let mean: f64 = 0.7 + 0.4 + 0.3;
        assert!((p.predicted - f.predicted - 0.5 * 0.75 * (0.3 * mean).powi(2)).abs() < 1e-12);
        let big = DVector::from_element(1, 1e4);
        assert!(matches!(
            cgf_check(&table, 0.75, 100_000, 0.25, &big, CgfVariant::Poisson),
            Err(Error::OverflowGuard { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn supercritical() -> impl Strategy<Value = (ValidatedModel, DualSolution)> {
            (1usize..=3)
                .prop_flat_map(|d| {
                    (
                        prop::collection::vec(0.2f64..6.0, d * (d + 1) / 2),
                        prop::collection::vec(0.1f64..1.0, d),
                    )
                })
                .prop_filter_map("not clearly supercritical", |(upper, w)| {
                    let d = w.len();
                    let total: f64 = w.iter().sum();
                    let mu: Vec<f64> = w.iter().map(|x| x / total).collect();
                    let mut kappa = vec![vec![0.0; d]; d];
                    let mut it = upper.into_iter();
                    for i in 0..d {
                        for j in i..d {
                            let x = it.next().unwrap();
                            kappa[i][j] = x;
                            kappa[j][i] = x;
                        }
                    }
                    let m = validate_model(&ModelSpec::new(kappa, mu, 1000)).ok()?;
                    let dual = solve_dual(&m, DEFAULT_DUAL_TOL).ok()?;
                    (dual.regime == Regime::Supercritical && dual.sigma > 1.05).then_some((m, dual))
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn context_matrices_are_pd((m, dual) in supercritical()) {
                let ctx = build_context(&m, &dual).unwrap();
                prop_assert!(ctx.giant_form_pd.is_pd());
                prop_assert!(ctx.a_plus_b_pd.is_pd());
                let (det, closed) = ctx.det_identity;
                prop_assert!((det - closed).abs() < 1e-10);
            }

            #[test]
            fn sufficient_condition_gives_pd(
                (m, dual) in supercritical(),
                raw in prop::collection::vec(0u32..=4, 3),
            ) {
                let ctx = build_context(&m, &dual).unwrap();
                let mut k: Vec<u32> = raw[..m.dim()].to_vec();
                while k.iter().sum::<u32>() > 4 {
                    let i = k.iter().position(|&x| x > 0).unwrap();
                    k[i] -= 1;
                }
                prop_assume!(k.iter().any(|&x| x > 0));
                if let Ok(kc) = build_k_context(&ctx, &TypeVector::new(k)) {
                    prop_assert!(!kc.pd_condition || kc.apbk_pd());
                    prop_assert!(crate::numeric::is_symmetric(&kc.b_k, 1e-9));
                }
            }

            #[test]
            fn rates_even_and_homogeneous(
                (m, dual) in supercritical(),
                xs in prop::collection::vec(-3.0f64..3.0, 3),
                s in 0.1f64..5.0,
            ) {
                let ctx = build_context(&m, &dual).unwrap();
                let x = DVector::from_vec(xs[..m.dim()].to_vec());
                let f = rate_i_giant(&ctx, &x);
                prop_assert!(f >= 0.0);
                prop_assert!((rate_i_giant(&ctx, &(-&x)) - f).abs() <= 1e-12 * (1.0 + f));
                prop_assert!((rate_i_giant(&ctx, &(&x * s)) - s * s * f).abs() <= 1e-10 * (1.0 + s * s * f));
                prop_assert_eq!(rate_i_giant(&ctx, &(&x * 0.0)), 0.0);
                let t = xs[0];
                let i1 = rate_i(&ctx, t).unwrap();
                prop_assert!((rate_i(&ctx, -t).unwrap() - i1).abs() <= 1e-12 * (1.0 + i1));
                prop_assert!((rate_i(&ctx, s * t).unwrap() - s * s * i1).abs() <= 1e-10 * (1.0 + s * s * i1));
                for which in [CppRate::J1, CppRate::J2] {
                    let j = cpp_rates(&ctx.base, &which, &x).unwrap();
                    prop_assert!((cpp_rates(&ctx.base, &which, &(&x * s)).unwrap() - s * s * j).abs() <= 1e-9 * (1.0 + s * s * j.abs()));
                }
            }
        }
    }
}

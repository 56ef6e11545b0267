//! The jump law X^{n,α} with normaliser Z_n^α, the exact component-census law
//! of the graph, the compound-Poisson representation of that law and the
//! limiting jump law.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::connectivity::{edge_probs, p_conn_explore, ConnTable};
use crate::error::{Error, Result, Warning};
use crate::model::{criticality, DualSolution, ValidatedModel, DEFAULT_EPS_CRIT};
use crate::numeric::{ln_factorial, log_sum_exp, CompensatedSum};
use crate::sim::{poisson, rng_from_seed};
use crate::tree::{h_weight, phi_closed, TailTracker, WeightForm};
use crate::typevec::{bounded_shell, shell, Lattice, TypeVector};

pub const EXHAUSTIVE_MAX_STATES: u64 = 1_000_000;
/// Rough operation budget for computing p_n on the whole support at once.
pub const EXHAUSTIVE_MAX_WORK: f64 = 1e8;
pub const CENSUS_MAX_TOTAL: u64 = 12;
pub const CONVOLUTION_MAX_TOTAL: u64 = 40;
pub const DEFAULT_CAP_MASS: f64 = 1e-12;
pub const MAX_JUMP_SHELLS: u32 = 20_000;

/// Model quantities shared by all compound-Poisson computations at finite n.
#[derive(Debug, Clone)]
struct Setup {
    n: u64,
    counts: Vec<u64>,
    mu_n: Vec<f64>,
    /// ln(1 − κ(r,s)/n).
    ln_q: DMatrix<f64>,
}

impl Setup {
    fn new(model: &ValidatedModel, what: &'static str) -> Result<Setup> {
        let n = model.n();
        let ratio = model.kappa_max() / n as f64;
        if ratio >= 1.0 {
            return Err(Error::EdgeProbabilityClamped { what, ratio });
        }
        Ok(Setup {
            n,
            counts: model.counts().to_vec(),
            mu_n: model.mu_n().iter().copied().collect(),
            ln_q: edge_probs(model.kappa(), n).map(|p| (-p).ln_1p()),
        })
    }

    fn dim(&self) -> usize {
        self.counts.len()
    }

    /// ln p_n(k) − Σ ln k_r! + Σ_s k_s Σ_r (N_r − k_r/2) ln(1−κ(r,s)/n).
    fn component_factor(&self, k: &TypeVector, ln_p: f64) -> f64 {
        let d = self.dim();
        let mut acc = CompensatedSum::new();
        acc.add(ln_p);
        for s in 0..d {
            let ks = f64::from(k.get(s));
            acc.add(-ln_factorial(u64::from(k.get(s))));
            if ks == 0.0 {
                continue;
            }
            for r in 0..d {
                let e = self.counts[r] as f64 - f64::from(k.get(r)) / 2.0;
                acc.add(ks * e * self.ln_q[(r, s)]);
            }
        }
        acc.value()
    }

    /// ln w(k) = (|k|−1) ln n + Σ_s k_s ln μⁿ_s + component factor.
    fn ln_weight(&self, k: &TypeVector, ln_p: f64) -> f64 {
        let mut v = (k.total() as f64 - 1.0) * (self.n as f64).ln() + self.component_factor(k, ln_p);
        for s in 0..self.dim() {
            if k.get(s) > 0 {
                v += f64::from(k.get(s)) * self.mu_n[s].ln();
            }
        }
        v
    }

    fn kmax(&self, alpha: &[f64]) -> Result<TypeVector> {
        if alpha.len() != self.dim() {
            return Err(Error::PreconditionViolated(format!(
                "alpha has {} entries for {} types",
                alpha.len(),
                self.dim()
            )));
        }
        let mut bound = Vec::with_capacity(alpha.len());
        for (s, &a) in alpha.iter().enumerate() {
            if !(a > 0.0 && a <= self.mu_n[s] + 1e-12) {
                return Err(Error::PreconditionViolated(format!(
                    "alpha[{s}] = {a} must lie in (0, mu_n[{s}] = {}]",
                    self.mu_n[s]
                )));
            }
            let cap = ((a * self.n as f64) + 1e-9).floor() as u64;
            bound.push(cap.min(self.counts[s]) as u32);
        }
        Ok(TypeVector::new(bound))
    }
}

/// Default truncation α = μⁿ.
pub fn full_alpha(model: &ValidatedModel) -> Vec<f64> {
    model.mu_n().iter().copied().collect()
}

/// Jump weight w(k) for k in S_{αn}.
pub fn jump_weight(k: &TypeVector, model: &ValidatedModel) -> Result<f64> {
    k.require_nonzero()?;
    k.require_dim(model.dim())?;
    let setup = Setup::new(model, "jump_weight")?;
    let counts: Vec<u64> = k.counts().iter().map(|&x| u64::from(x)).collect();
    if counts.iter().zip(&setup.counts).any(|(a, b)| a > b) {
        return Err(Error::PreconditionViolated(format!(
            "k = {k} exceeds the vertex counts"
        )));
    }
    let p = crate::connectivity::p_conn_exact(k, setup.n, model.kappa())?;
    Ok(setup.ln_weight(k, p.log_value).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enumeration {
    Exhaustive,
    Shells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpAtom {
    pub k: TypeVector,
    pub weight: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    pub n: u64,
    pub alpha: Vec<f64>,
    /// Coordinatewise bound ⌊α n⌋ of the support.
    pub kmax: TypeVector,
    pub support: Vec<JumpAtom>,
    /// Z_n^α (retained mass plus the extrapolated tail when truncated).
    pub z: f64,
    pub truncated: bool,
    /// Fraction of Z carried by the retained support.
    pub retained_mass: f64,
    pub enumeration: Enumeration,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

impl JumpLaw {
    pub fn mean(&self) -> DVector<f64> {
        let d = self.kmax.dim();
        let mut m = vec![CompensatedSum::new(); d];
        for a in &self.support {
            for r in 0..d {
                m[r].add(f64::from(a.k.get(r)) * a.probability);
            }
        }
        DVector::from_iterator(d, m.iter().map(CompensatedSum::value))
    }

    /// E[X Xᵀ].
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.kmax.dim();
        let mut m = DMatrix::zeros(d, d);
        for a in &self.support {
            let k = a.k.as_f64();
            for r in 0..d {
                for s in 0..d {
                    m[(r, s)] += k[r] * k[s] * a.probability;
                }
            }
        }
        m
    }

    pub fn probability(&self, k: &TypeVector) -> f64 {
        self.support
            .iter()
            .find(|a| &a.k == k)
            .map_or(0.0, |a| a.probability)
    }

    pub fn weights(&self) -> BTreeMap<TypeVector, f64> {
        self.support.iter().map(|a| (a.k.clone(), a.weight)).collect()
    }
}

fn exhaustive_feasible(kmax: &TypeVector) -> bool {
    let states = Lattice::size(kmax.counts());
    let work: f64 = kmax
        .counts()
        .iter()
        .map(|&k| (f64::from(k) + 1.0).powi(4) / 24.0)
        .product();
    states <= EXHAUSTIVE_MAX_STATES && work <= EXHAUSTIVE_MAX_WORK
}

/// The jump law on S_{αn} = {k ≠ 0 : k_s ≤ ⌊α_s n⌋}.
pub fn jump_law(model: &ValidatedModel, alpha: &[f64], cap_mass: f64) -> Result<JumpLaw> {
    let setup = Setup::new(model, "jump_law")?;
    let kmax = setup.kmax(alpha)?;
    let mut warnings = Vec::new();
    if let Ok(report) = criticality(&model.with_realized_measure(), DEFAULT_EPS_CRIT) {
        if !report.moment_condition_ok {
            warnings.push(Warning::MomentConditionFails {
                margin: report.moment_margin,
            });
        }
    }
    let (atoms, z, truncated, enumeration) = if exhaustive_feasible(&kmax) {
        let table = ConnTable::build(&kmax, setup.n, model.kappa())?;
        let lat = table.lattice().clone();
        let mut atoms = Vec::with_capacity(lat.len());
        for idx in 1..lat.len() {
            let k = TypeVector::new(lat.point(idx));
            let p = table.get(k.counts());
            atoms.push((k.clone(), setup.ln_weight(&k, p.ln())));
        }
        atoms.sort_by(|a, b| a.0.total().cmp(&b.0.total()).then(a.0.cmp(&b.0)));
        let lw: Vec<f64> = atoms.iter().map(|a| a.1).collect();
        let z = log_sum_exp(&lw).exp();
        (atoms, z, false, Enumeration::Exhaustive)
    } else {
        let max_total = kmax.total() as u32;
        let mut atoms = Vec::new();
        let mut retained = CompensatedSum::new();
        let mut tracker = TailTracker::default();
        let mut m = 0u32;
        let mut tail = 0.0;
        let mut truncated = false;
        while m < max_total {
            m += 1;
            let mut shell_mass = CompensatedSum::new();
            for k in bounded_shell(kmax.counts(), m) {
                let p = p_conn_explore(&k, setup.n, model.kappa())?;
                let lw = setup.ln_weight(&k, p.log_value);
                shell_mass.add(lw.exp());
                atoms.push((k, lw));
            }
            retained.add(shell_mass.value());
            tail = tracker.push(shell_mass.value());
            if m >= 3 && tail <= cap_mass * retained.value() {
                truncated = m < max_total;
                break;
            }
            if m >= 10 && tracker.ratio >= 1.0 {
                return Err(Error::NoDecay {
                    what: "jump-law shell masses",
                    shell: m as usize,
                    ratio: tracker.ratio,
                });
            }
            if m >= MAX_JUMP_SHELLS {
                return Err(Error::NoConvergence {
                    what: "jump-law shell enumeration",
                    iterations: m as usize,
                });
            }
        }
        let z = retained.value() + if truncated { tail } else { 0.0 };
        (atoms, z, truncated, Enumeration::Shells)
    };
    let lw: Vec<f64> = atoms.iter().map(|a| a.1).collect();
    let ln_retained = log_sum_exp(&lw);
    let support = atoms
        .into_iter()
        .map(|(k, l)| JumpAtom {
            k,
            weight: l.exp(),
            probability: (l - ln_retained).exp(),
        })
        .collect();
    Ok(JumpLaw {
        n: setup.n,
        alpha: alpha.to_vec(),
        kmax,
        support,
        z,
        truncated,
        retained_mass: ln_retained.exp() / z,
        enumeration,
        warnings,
    })
}

/// A component census γ: configuration → number of components.
pub type Census = BTreeMap<TypeVector, u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusLawEntry {
    #[serde(with = "gamma_list")]
    pub gamma: Census,
    pub probability: f64,
    pub log_probability: f64,
}

pub mod gamma_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Census;
    use crate::typevec::TypeVector;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        k: TypeVector,
        count: u32,
    }

    pub fn serialize<S: Serializer>(g: &Census, ser: S) -> Result<S::Ok, S::Error> {
        g.iter()
            .map(|(k, &count)| Entry { k: k.clone(), count })
            .collect::<Vec<_>>()
            .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Census, D::Error> {
        Ok(Vec::<Entry>::deserialize(de)?
            .into_iter()
            .map(|e| (e.k, e.count))
            .collect())
    }
}

/// Every census γ with Σ_k k γ_k = target.
pub fn enumerate_censuses(target: &TypeVector) -> Vec<Census> {
    let lat = Lattice::new(target.counts());
    let mut parts: Vec<TypeVector> = (1..lat.len()).map(|i| TypeVector::new(lat.point(i))).collect();
    parts.reverse();
    let mut out = Vec::new();
    let mut current = Census::new();
    fn rec(parts: &[TypeVector], idx: usize, remaining: &mut Vec<u32>, current: &mut Census, out: &mut Vec<Census>) {
        if remaining.iter().all(|&x| x == 0) {
            out.push(current.clone());
            return;
        }
        if idx == parts.len() {
            return;
        }
        let k = &parts[idx];
        let mut max_mult = u32::MAX;
        for (r, &x) in k.counts().iter().enumerate() {
            if x > 0 {
                max_mult = max_mult.min(remaining[r] / x);
            }
        }
        for mult in (0..=max_mult).rev() {
            if mult > 0 {
                for (r, &x) in k.counts().iter().enumerate() {
                    remaining[r] -= x * mult;
                }
                current.insert(k.clone(), mult);
            }
            rec(parts, idx + 1, remaining, current, out);
            if mult > 0 {
                for (r, &x) in k.counts().iter().enumerate() {
                    remaining[r] += x * mult;
                }
                current.remove(k);
            }
        }
    }
    let mut remaining = target.counts().to_vec();
    rec(&parts, 0, &mut remaining, &mut current, &mut out);
    out
}

fn require_census_feasible(model: &ValidatedModel) -> Result<TypeVector> {
    let total: u64 = model.counts().iter().sum();
    if total > CENSUS_MAX_TOTAL {
        return Err(Error::TooManyPartitions {
            total,
            max: CENSUS_MAX_TOTAL,
        });
    }
    Ok(TypeVector::new(model.counts().iter().map(|&x| x as u32).collect()))
}

/// Exact law of the component census of G(n, μⁿ, κ), including the
/// normalising factor ∏_{r,s}(1−κ(r,s)/n)^{−N_r N_s/2}.
pub fn census_law_exact(model: &ValidatedModel) -> Result<Vec<CensusLawEntry>> {
    let target = require_census_feasible(model)?;
    let setup = Setup::new(model, "census_law_exact")?;
    let table = ConnTable::build(&target, setup.n, model.kappa())?;
    let d = setup.dim();
    let mut base = CompensatedSum::new();
    for r in 0..d {
        base.add(ln_factorial(setup.counts[r]));
        for s in 0..d {
            base.add(-((setup.counts[r] * setup.counts[s]) as f64) / 2.0 * setup.ln_q[(r, s)]);
        }
    }
    let base = base.value();
    let entries = enumerate_censuses(&target)
        .into_iter()
        .map(|gamma| {
            let mut lp = CompensatedSum::new();
            lp.add(base);
            for (k, &g) in &gamma {
                let a = setup.component_factor(k, table.get(k.counts()).ln());
                lp.add(f64::from(g) * a - ln_factorial(u64::from(g)));
            }
            let log_probability = lp.value();
            CensusLawEntry {
                gamma,
                probability: log_probability.exp(),
                log_probability,
            }
        })
        .collect();
    Ok(entries)
}

fn within(gamma: &Census, kmax: &TypeVector) -> bool {
    gamma.keys().all(|k| k.le(kmax))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalProb {
    pub value: f64,
    pub log_value: f64,
    /// P(every component ≤ ⌊αn⌋); absent for the convolution route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning_prob: Option<f64>,
}

/// P(Σ_{i ≤ N(Zn)} X_i = μⁿn) from the closed form
/// e^{−Zn} nⁿ ∏(1−κ/n)^{N_rN_s/2} ∏ (μⁿ_s)^{N_s} / ∏ N_s! × P(all components ≤ αn).
pub fn terminal_prob_formula(model: &ValidatedModel, alpha: &[f64]) -> Result<TerminalProb> {
    let setup = Setup::new(model, "terminal_prob_formula")?;
    let kmax = setup.kmax(alpha)?;
    let law = jump_law(model, alpha, DEFAULT_CAP_MASS)?;
    let full = kmax.counts().iter().zip(&setup.counts).all(|(&a, &b)| u64::from(a) == b);
    let cond = if full {
        1.0
    } else {
        let mut s = CompensatedSum::new();
        for e in census_law_exact(model)? {
            if within(&e.gamma, &kmax) {
                s.add(e.probability);
            }
        }
        s.value()
    };
    let d = setup.dim();
    let nf = setup.n as f64;
    let mut lv = CompensatedSum::new();
    lv.add(-law.z * nf);
    lv.add(nf * nf.ln());
    for r in 0..d {
        lv.add(-ln_factorial(setup.counts[r]));
        lv.add(setup.counts[r] as f64 * setup.mu_n[r].ln());
        for s in 0..d {
            lv.add((setup.counts[r] * setup.counts[s]) as f64 / 2.0 * setup.ln_q[(r, s)]);
        }
    }
    lv.add(cond.ln());
    let log_value = lv.value();
    Ok(TerminalProb {
        value: log_value.exp(),
        log_value,
        conditioning_prob: Some(cond),
    })
}

/// P(Σ_{i ≤ N(Zn)} X_i = μⁿn) as a Poisson mixture of convolution powers of
/// the jump weights on the lattice {0 ≤ m ≤ μⁿn}.
pub fn terminal_prob_convolution(model: &ValidatedModel, alpha: &[f64]) -> Result<TerminalProb> {
    let target: Vec<u32> = model.counts().iter().map(|&x| x as u32).collect();
    let total: u64 = model.counts().iter().sum();
    if total > CONVOLUTION_MAX_TOTAL {
        return Err(Error::LatticeTooLarge {
            points: Lattice::size(&target),
            total,
            max: CONVOLUTION_MAX_TOTAL,
        });
    }
    let law = jump_law(model, alpha, DEFAULT_CAP_MASS)?;
    let lat = Lattice::new(&target);
    let nf = model.n() as f64;
    // Jump weights scaled by n, on the lattice.
    let mut jump = vec![0.0; lat.len()];
    for a in &law.support {
        jump[lat.index(a.k.counts())] = nf * a.weight;
    }
    let top = lat.index(&target);
    let mut power = vec![0.0; lat.len()];
    power[0] = 1.0;
    let mut acc = CompensatedSum::new();
    for j in 1..=total {
        let mut next = vec![0.0; lat.len()];
        for (i, &pv) in power.iter().enumerate() {
            if pv == 0.0 {
                continue;
            }
            let base = lat.point(i);
            let room: Vec<u32> = target.iter().zip(&base).map(|(t, b)| t - b).collect();
            for step in lat.sub_indices(&room) {
                if jump[step] != 0.0 {
                    next[i + step] += pv * jump[step] / j as f64;
                }
            }
        }
        power = next;
        acc.add(power[top]);
    }
    let log_value = -law.z * nf + acc.value().ln();
    Ok(TerminalProb {
        value: log_value.exp(),
        log_value,
        conditioning_prob: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub n: u64,
    pub alpha: Vec<f64>,
    pub censuses: usize,
    pub tv_distance: f64,
    pub terminal_formula: f64,
    pub terminal_convolution: f64,
    pub terminal_rel_gap: f64,
    pub conditioning_prob: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compares the graph census law conditioned on all components lying in
/// S_{αn} with the census law of the conditioned compound-Poisson jumps.
pub fn verify_representation(model: &ValidatedModel, alpha: &[f64], tol: f64) -> Result<RepresentationReport> {
    let setup = Setup::new(model, "verify_representation")?;
    let kmax = setup.kmax(alpha)?;
    let graph = census_law_exact(model)?;
    let law = jump_law(model, alpha, DEFAULT_CAP_MASS)?;
    let formula = terminal_prob_formula(model, alpha)?;
    let conv = terminal_prob_convolution(model, alpha)?;
    let weights = law.weights();
    let nf = setup.n as f64;
    let cond = formula.conditioning_prob.unwrap_or(1.0);
    let mut tv = CompensatedSum::new();
    let mut count = 0;
    for e in graph.iter().filter(|e| within(&e.gamma, &kmax)) {
        count += 1;
        let lhs = e.probability / cond;
        let mut lp = CompensatedSum::new();
        lp.add(-law.z * nf - conv.log_value);
        for (k, &g) in &e.gamma {
            lp.add(f64::from(g) * (nf * weights[k]).ln() - ln_factorial(u64::from(g)));
        }
        tv.add((lhs - lp.value().exp()).abs());
    }
    let tv_distance = 0.5 * tv.value();
    let terminal_rel_gap = (formula.value - conv.value).abs() / conv.value;
    Ok(RepresentationReport {
        n: setup.n,
        alpha: alpha.to_vec(),
        censuses: count,
        tv_distance,
        terminal_formula: formula.value,
        terminal_convolution: conv.value,
        terminal_rel_gap,
        conditioning_prob: cond,
        tol,
        pass: tv_distance <= tol && terminal_rel_gap <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitAtom {
    pub k: TypeVector,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitJumpLaw {
    pub radius: u32,
    pub table: Vec<LimitAtom>,
    pub q: f64,
    /// m = c/q.
    #[serde(with = "crate::numeric::serde_vec")]
    pub mean: DVector<f64>,
    /// Ψ = Φ/q.
    #[serde(with = "crate::numeric::serde_mat")]
    pub second_moment: DMatrix<f64>,
    #[serde(with = "crate::numeric::serde_vec")]
    pub table_mean: DVector<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub table_second_moment: DMatrix<f64>,
    /// 1 − Σ over the table.
    pub deficit: f64,
    pub tail_estimate: f64,
    pub eta: Vec<f64>,
    pub eta_shell_ratio: f64,
}

pub const ETA_START: f64 = 0.1;
pub const ETA_MIN: f64 = 1e-6;

/// Tabulates P(X = k) = h(k)/q for |k| ≤ K (c-form weights) with the moments
/// from the closed forms and a tilt η with a finite exponential moment.
pub fn limit_jump_law(model: &ValidatedModel, dual: &DualSolution, radius: u32) -> Result<LimitJumpLaw> {
    if dual.regime == crate::model::Regime::NearCritical {
        return Err(Error::NearCritical { sigma: dual.sigma });
    }
    if radius < 2 {
        return Err(Error::PreconditionViolated("radius must be at least 2".into()));
    }
    let kappa = model.kappa();
    let c = &dual.c;
    let d = c.len();
    let q = dual.q(kappa);
    let phi = phi_closed(kappa, c)?;
    let mut total = CompensatedSum::new();
    let mut tm = vec![CompensatedSum::new(); d];
    let mut tsm = DMatrix::zeros(d, d);
    let mut tracker = TailTracker::default();
    let mut shells = Vec::new();
    for m in 1..=radius {
        let mut shell_mass = CompensatedSum::new();
        let mut atoms = Vec::new();
        for k in shell(d, m) {
            let p = h_weight(&k, kappa, c, WeightForm::C)?.h / q;
            shell_mass.add(p);
            total.add(p);
            let kf = k.as_f64();
            for r in 0..d {
                tm[r].add(kf[r] * p);
                for s in 0..d {
                    tsm[(r, s)] += kf[r] * kf[s] * p;
                }
            }
            atoms.push(LimitAtom { k, probability: p });
        }
        tracker.push(shell_mass.value());
        shells.push(atoms);
    }
    let tail_estimate = tracker.tail;
    // Exponential moment: shell ratio of Σ e^{⟨η,k⟩} h(k) at the outermost shells.
    let tilted = |eta: f64, atoms: &[LimitAtom]| -> f64 {
        atoms
            .iter()
            .map(|a| a.probability * (eta * a.k.total() as f64).exp())
            .sum()
    };
    let (last, prev) = (&shells[shells.len() - 1], &shells[shells.len() - 2]);
    let mut eta = ETA_START;
    let ratio = loop {
        let r = tilted(eta, last) / tilted(eta, prev);
        if r < 1.0 {
            break r;
        }
        eta /= 2.0;
        if eta < ETA_MIN {
            return Err(Error::NoExponentialMoment { eta });
        }
    };
    Ok(LimitJumpLaw {
        radius,
        table: shells.into_iter().flatten().collect(),
        q,
        mean: c / q,
        second_moment: &phi / q,
        table_mean: DVector::from_iterator(d, tm.iter().map(CompensatedSum::value)),
        table_second_moment: tsm,
        deficit: 1.0 - total.value(),
        tail_estimate,
        eta: vec![eta; d],
        eta_shell_ratio: ratio,
    })
}

/// N ~ Poisson(Z n) jumps drawn i.i.d. from the retained support.
pub fn sample_cpp(law: &JumpLaw, seed: u64) -> Result<Vec<TypeVector>> {
    let mut rng = rng_from_seed(seed);
    let probs: Vec<f64> = law.support.iter().map(|a| a.probability).collect();
    let alias = WeightedAliasIndex::new(probs)
        .map_err(|e| Error::PreconditionViolated(format!("jump law: {e}")))?;
    let count = poisson(&mut rng, law.z * law.n as f64);
    Ok((0..count)
        .map(|_| law.support[alias.sample(&mut rng)].k.clone())
        .collect())
}

//! Connection probability p_n(k): the probability that the random graph on a
//! vertex multiset with type counts k is connected.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{CompensatedSum, LnFactorial};
use crate::tree::tau_log_reduced;
use crate::typevec::{Lattice, TypeVector};

pub const DP_MAX_STATES: u64 = 10_000_000;
pub const EXPLORE_MAX_STATES: u64 = 50_000_000;
pub const BRUTE_MAX: u64 = 6;
/// Relative rounding-error bound above which a DP entry is recomputed by exploration.
pub const DP_COND_LIMIT: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnMethod {
    ExactDp,
    Exploration,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnProbResult {
    pub value: f64,
    pub log_value: f64,
    pub method: ConnMethod,
}

impl ConnProbResult {
    fn new(value: f64, method: ConnMethod) -> Self {
        ConnProbResult {
            value,
            log_value: value.ln(),
            method,
        }
    }
}

/// Edge probabilities min(1, κ(r,s)/n).
pub fn edge_probs(kappa: &DMatrix<f64>, n: u64) -> DMatrix<f64> {
    kappa.map(|x| (x / n as f64).min(1.0))
}

fn check_inputs(k: &TypeVector, n: u64, kappa: &DMatrix<f64>) -> Result<()> {
    k.require_nonzero()?;
    k.require_dim(kappa.nrows())?;
    if n == 0 {
        return Err(Error::PreconditionViolated("n must be positive".into()));
    }
    Ok(())
}

/// ln((1−p)^e) with the convention 0⁰ = 1.
fn ln_pow(ln_base: f64, e: u64) -> f64 {
    if e == 0 {
        0.0
    } else {
        e as f64 * ln_base
    }
}

fn default_anchor(m: &[u32]) -> usize {
    let mut best = 0;
    for (s, &x) in m.iter().enumerate() {
        if x > m[best] {
            best = s;
        }
    }
    best
}

/// p_n for every sub-vector of a bound, indexed by a [`Lattice`].
#[derive(Debug, Clone)]
pub struct ConnTable {
    lattice: Lattice,
    values: Vec<f64>,
    methods: Vec<ConnMethod>,
}

impl ConnTable {
    /// Anchored lattice recursion with compensated summation; entries whose
    /// rounding-error bound exceeds [`DP_COND_LIMIT`] are recomputed by the
    /// exploration recursion, which involves no subtraction.
    pub fn build(bound: &TypeVector, n: u64, kappa: &DMatrix<f64>) -> Result<ConnTable> {
        Self::build_with(bound, n, kappa, None)
    }

    fn build_with(
        bound: &TypeVector,
        n: u64,
        kappa: &DMatrix<f64>,
        top_anchor: Option<usize>,
    ) -> Result<ConnTable> {
        let states = Lattice::size(bound.counts());
        if states > DP_MAX_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                max: DP_MAX_STATES,
            });
        }
        let d = bound.dim();
        let lattice = Lattice::new(bound.counts());
        let p = edge_probs(kappa, n);
        let ln_q = p.map(|x| (1.0 - x).ln());
        let max_k = bound.counts().iter().copied().max().unwrap_or(0) as usize;
        let lf = LnFactorial::new(max_k);
        let mut values = vec![0.0f64; lattice.len()];
        let mut methods = vec![ConnMethod::ExactDp; lattice.len()];
        let mut explorer = Explorer::new(kappa, n);
        for idx in 1..lattice.len() {
            let m = lattice.point(idx);
            let total: u32 = m.iter().sum();
            if total == 1 {
                values[idx] = 1.0;
                continue;
            }
            let anchor = match top_anchor {
                Some(a) if idx + 1 == lattice.len() => {
                    if m[a] == 0 {
                        return Err(Error::PreconditionViolated(format!(
                            "anchor type {a} has no vertices"
                        )));
                    }
                    a
                }
                _ => default_anchor(&m),
            };
            let mut acc = CompensatedSum::new();
            let mut abs = 0.0;
            for_each_sub(&m, |j| {
                if j[anchor] == 0 || j == m.as_slice() {
                    return;
                }
                let qj = values[lattice.index(j)];
                if qj == 0.0 {
                    return;
                }
                let mut ln_term = qj.ln();
                for s in 0..d {
                    let (ms, js) = (m[s] as usize, j[s] as usize);
                    if s == anchor {
                        ln_term += lf.ln_binom(ms - 1, js - 1);
                    } else {
                        ln_term += lf.ln_binom(ms, js);
                    }
                    for t in 0..d {
                        ln_term += ln_pow(ln_q[(s, t)], u64::from(j[s]) * u64::from(m[t] - j[t]));
                    }
                }
                let term = ln_term.exp();
                acc.add(term);
                abs += term;
            });
            let q = 1.0 - acc.value();
            let err_bound = f64::EPSILON * (1.0 + abs) * 4.0;
            if q > 0.0 && err_bound <= DP_COND_LIMIT * q {
                values[idx] = q;
            } else {
                values[idx] = explorer.run(&m, anchor)?;
                methods[idx] = ConnMethod::Exploration;
            }
        }
        Ok(ConnTable {
            lattice,
            values,
            methods,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn get(&self, k: &[u32]) -> f64 {
        self.values[self.lattice.index(k)]
    }

    pub fn method(&self, k: &[u32]) -> ConnMethod {
        self.methods[self.lattice.index(k)]
    }
}

/// Calls `f` on every j with 0 ≤ j ≤ m (coordinatewise).
fn for_each_sub(m: &[u32], mut f: impl FnMut(&[u32])) {
    let d = m.len();
    let mut j = vec![0u32; d];
    loop {
        f(&j);
        let mut s = 0;
        while s < d {
            if j[s] < m[s] {
                j[s] += 1;
                break;
            }
            j[s] = 0;
            s += 1;
        }
        if s == d {
            return;
        }
    }
}

/// p_n(k) by the anchored lattice recursion (exploration used per entry
/// when the recursion is ill-conditioned).
pub fn p_conn_exact(k: &TypeVector, n: u64, kappa: &DMatrix<f64>) -> Result<ConnProbResult> {
    check_inputs(k, n, kappa)?;
    let table = ConnTable::build(k, n, kappa)?;
    Ok(ConnProbResult::new(table.get(k.counts()), table.method(k.counts())))
}

/// As [`p_conn_exact`] with the anchor type of the final step forced.
pub fn p_conn_exact_anchored(
    k: &TypeVector,
    n: u64,
    kappa: &DMatrix<f64>,
    anchor: usize,
) -> Result<ConnProbResult> {
    check_inputs(k, n, kappa)?;
    let table = ConnTable::build_with(k, n, kappa, Some(anchor))?;
    Ok(ConnProbResult::new(table.get(k.counts()), table.method(k.counts())))
}

/// p_n(k) by breadth-first exploration: vertices are explored one at a time
/// and each reveals Binomial(unexplored, p) new neighbours per type.
pub fn p_conn_explore(k: &TypeVector, n: u64, kappa: &DMatrix<f64>) -> Result<ConnProbResult> {
    check_inputs(k, n, kappa)?;
    let v = Explorer::new(kappa, n).run(k.counts(), default_anchor(k.counts()))?;
    Ok(ConnProbResult::new(v, ConnMethod::Exploration))
}

struct Explorer {
    p: DMatrix<f64>,
    /// pmf[(s, r)][u] = Binomial(u, p_sr) pmf, grown on demand.
    pmf: Vec<Vec<Vec<f64>>>,
}

impl Explorer {
    fn new(kappa: &DMatrix<f64>, n: u64) -> Self {
        let d = kappa.nrows();
        Explorer {
            p: edge_probs(kappa, n),
            pmf: vec![Vec::new(); d * d],
        }
    }

    fn ensure_pmf(&mut self, upto: usize) {
        let d = self.p.nrows();
        for s in 0..d {
            for r in 0..d {
                let p = self.p[(s, r)];
                let table = &mut self.pmf[s * d + r];
                while table.len() <= upto {
                    let u = table.len();
                    table.push(binomial_pmf(u, p));
                }
            }
        }
    }

    fn run(&mut self, k: &[u32], anchor: usize) -> Result<f64> {
        let d = k.len();
        let total: u32 = k.iter().sum();
        if total <= 1 {
            return Ok(1.0);
        }
        // State lattice over (u, t): unexplored and explored counts per type.
        // t occupies the high digits, so every transition (some t_s grows)
        // moves to a larger index.
        let mut bound = k.to_vec();
        bound.extend_from_slice(k);
        let states = Lattice::size(&bound);
        if states > EXPLORE_MAX_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                max: EXPLORE_MAX_STATES,
            });
        }
        self.ensure_pmf(*k.iter().max().expect("nonempty") as usize);
        let lat = Lattice::new(&bound);
        let mut mass = vec![0.0f64; lat.len()];
        let mut start = vec![0u32; 2 * d];
        for r in 0..d {
            start[r] = k[r] - u32::from(r == anchor);
        }
        mass[lat.index(&start)] = 1.0;
        let mut success = 0.0;
        let mut x = vec![0u32; d];
        let mut target = vec![0u32; 2 * d];
        // Every transition increases some t_s, hence the lattice index.
        for idx in 0..lat.len() {
            let w = mass[idx];
            if w == 0.0 {
                continue;
            }
            let state = lat.point(idx);
            let (u, t) = state.split_at(d);
            if t == k {
                success += w;
                continue;
            }
            let Some(s) = (0..d).find(|&s| k[s] > t[s] + u[s]) else {
                continue;
            };
            target[d..].copy_from_slice(t);
            target[d + s] += 1;
            // Enumerate the number of newly found vertices of each type.
            x.iter_mut().for_each(|v| *v = 0);
            loop {
                let mut prob = w;
                for r in 0..d {
                    prob *= self.pmf[s * d + r][u[r] as usize][x[r] as usize];
                    target[r] = u[r] - x[r];
                }
                if prob != 0.0 {
                    mass[lat.index(&target)] += prob;
                }
                let mut r = 0;
                while r < d {
                    if x[r] < u[r] {
                        x[r] += 1;
                        break;
                    }
                    x[r] = 0;
                    r += 1;
                }
                if r == d {
                    break;
                }
            }
        }
        Ok(success.min(1.0))
    }
}

fn binomial_pmf(u: usize, p: f64) -> Vec<f64> {
    if p >= 1.0 {
        let mut v = vec![0.0; u + 1];
        v[u] = 1.0;
        return v;
    }
    let lf = LnFactorial::new(u);
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=u)
        .map(|x| (lf.ln_binom(u, x) + x as f64 * lp + (u - x) as f64 * lq).exp())
        .collect()
}

/// p_n(k) by summing over every edge subset of the |k|-vertex graph.
pub fn p_conn_brute(k: &TypeVector, n: u64, kappa: &DMatrix<f64>) -> Result<ConnProbResult> {
    check_inputs(k, n, kappa)?;
    let v = k.total();
    if v > BRUTE_MAX {
        return Err(Error::TooLarge {
            what: "edge-subset enumeration",
            size: v,
            max: BRUTE_MAX,
        });
    }
    let x = k.expand();
    let v = x.len();
    let p = edge_probs(kappa, n);
    let pairs: Vec<(usize, usize)> = (0..v)
        .flat_map(|i| (i + 1..v).map(move |j| (i, j)))
        .collect();
    let probs: Vec<f64> = pairs.iter().map(|&(i, j)| p[(x[i], x[j])]).collect();
    let full = (1usize << v) - 1;
    let mut total = CompensatedSum::new();
    for mask in 0u32..(1u32 << pairs.len()) {
        let mut adj = vec![0usize; v];
        let mut weight = 1.0;
        for (e, &(i, j)) in pairs.iter().enumerate() {
            if mask >> e & 1 == 1 {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
                weight *= probs[e];
            } else {
                weight *= 1.0 - probs[e];
            }
        }
        let mut seen = 1usize;
        loop {
            let mut next = seen;
            for (i, a) in adj.iter().enumerate() {
                if seen >> i & 1 == 1 {
                    next |= a;
                }
            }
            if next == seen {
                break;
            }
            seen = next;
        }
        if seen == full {
            total.add(weight);
        }
    }
    Ok(ConnProbResult::new(total.value(), ConnMethod::BruteForce))
}

/// Closed-form bounds and shapes for p_n(k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnBounds {
    pub est_lower: f64,
    pub est_upper: f64,
    pub meso_upper: f64,
    pub esti2p_upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binom_upper: Option<f64>,
    pub plb_shape: f64,
    pub anchor: usize,
}

/// Evaluates the bounds for k. `anchor` defaults to the type with the most
/// vertices; `ambient` is the configuration m ≥ k used by the binomial bound.
pub fn p_conn_bounds(
    k: &TypeVector,
    n: u64,
    kappa: &DMatrix<f64>,
    anchor: Option<usize>,
    ambient: Option<&TypeVector>,
) -> Result<ConnBounds> {
    check_inputs(k, n, kappa)?;
    let d = k.dim();
    let r = anchor.unwrap_or_else(|| default_anchor(k.counts()));
    if r >= d || k.get(r) == 0 {
        return Err(Error::PreconditionViolated(format!(
            "anchor type {r} must satisfy k_r >= 1"
        )));
    }
    let nf = n as f64;
    let kf = k.as_f64();
    let size = k.total() as f64;
    let log_tau = tau_log_reduced(k, kappa)?;
    let kappa_inf = kappa.iter().copied().fold(0.0, f64::max);
    let est_upper = ((1.0 - size) * nf.ln() + log_tau).exp();
    let est_lower = (1.0 - kappa_inf / nf).max(0.0).powf(size * size / 2.0) * est_upper;

    let supp: Vec<usize> = (0..d).filter(|&s| k.get(s) > 0).collect();
    let kk: Vec<f64> = (0..d)
        .map(|s| (0..d).map(|t| kappa[(s, t)] * kf[t]).sum())
        .collect();
    let sk = supp.len() as f64;
    let mut ln_meso = (sk - 1.0) * (kappa_inf * sk).ln() + (1.0 - size) * nf.ln() - 2.0 * kf[r].ln();
    for &s in &supp {
        ln_meso += (kf[s] - 1.0) * kk[s].ln() + kf[s].ln();
    }

    // Factors 1 − e^{−(κk)_s/n}, restricted to the support of k.
    let one_minus = |s: usize| -(-kk[s] / nf).exp_m1();
    let mut ln_esti2p = 0.0;
    let mut ln_plb = one_minus(r).ln();
    for &s in &supp {
        ln_esti2p += 0.5 * (2.0 * std::f64::consts::PI * kf[s]).ln() + kk[s] / (2.0 * nf);
        ln_esti2p += kf[s] * one_minus(s).ln();
        ln_plb += nf.ln() - 0.5 * kf[s].ln() + kf[s] * one_minus(s).ln();
    }

    let binom_upper = ambient.map(|m| binom_upper(k, m, n, kappa, r)).transpose()?;
    Ok(ConnBounds {
        est_lower,
        est_upper,
        meso_upper: ln_meso.exp(),
        esti2p_upper: ln_esti2p.exp(),
        binom_upper,
        plb_shape: ln_plb.exp(),
        anchor: r,
    })
}

/// p_n(k) ≤ [∏_s C(m_s−δ_rs, k_s−δ_rs)]⁻¹ ∏_{s,s'} (1−κ(s,s')/n)^{−k_s(m_s'−k_s')}
/// for an ambient configuration m ≥ k: the anchored vertex's component in
/// the graph on m has configuration k with probability at most one.
pub fn binom_upper(
    k: &TypeVector,
    m: &TypeVector,
    n: u64,
    kappa: &DMatrix<f64>,
    r: usize,
) -> Result<f64> {
    if m.dim() != k.dim() || !k.le(m) {
        return Err(Error::PreconditionViolated(format!(
            "binomial bound needs k <= m, got k = {k}, m = {m}"
        )));
    }
    if k.get(r) == 0 {
        return Err(Error::PreconditionViolated(format!(
            "binomial bound needs k_r >= 1 for anchor r = {r}"
        )));
    }
    let d = k.dim();
    let lf = LnFactorial::new(*m.counts().iter().max().expect("nonempty") as usize);
    let ln_q = edge_probs(kappa, n).map(|x| (1.0 - x).ln());
    let mut ln = 0.0;
    for s in 0..d {
        let delta = usize::from(s == r);
        ln -= lf.ln_binom(m.get(s) as usize - delta, k.get(s) as usize - delta);
        for t in 0..d {
            ln -= ln_pow(ln_q[(s, t)], u64::from(k.get(s)) * u64::from(m.get(t) - k.get(t)));
        }
    }
    Ok(ln.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tv(v: &[u32]) -> TypeVector {
        TypeVector::new(v.to_vec())
    }

    fn one(k: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, k)
    }

    #[test]
    fn small_exact_values() {
        assert!((p_conn_exact(&tv(&[2]), 10, &one(3.0)).unwrap().value - 0.3).abs() < 1e-15);
        let p = 0.1;
        let want = 3.0 * p * p * (1.0 - p) + p * p * p;
        assert!((p_conn_exact(&tv(&[3]), 10, &one(1.0)).unwrap().value - want).abs() < 1e-15);
        assert!((want - 0.028).abs() < 1e-15);
        assert_eq!(p_conn_exact(&tv(&[0, 1]), 10, &DMatrix::from_element(2, 2, 1.0)).unwrap().value, 1.0);
    }

    #[test]
    fn brute_small_values() {
        assert_eq!(p_conn_brute(&tv(&[1]), 5, &one(1.0)).unwrap().value, 1.0);
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 4.0, 1.0]);
        assert!((p_conn_brute(&tv(&[1, 1]), 8, &k).unwrap().value - 0.5).abs() < 1e-15);
        assert!(p_conn_brute(&tv(&[7]), 8, &one(1.0)).is_err());
    }

    #[test]
    fn four_vertex_polynomial() {
        // Connected graphs on 4 labelled vertices: 16 trees (3 edges),
        // 15 with 4 edges, 6 with 5 edges, 1 complete.
        let n = 13;
        let p = 2.0 / n as f64;
        let q = 1.0 - p;
        let want = 16.0 * p.powi(3) * q.powi(3) + 15.0 * p.powi(4) * q.powi(2) + 6.0 * p.powi(5) * q + p.powi(6);
        let b = p_conn_brute(&tv(&[4]), n, &one(2.0)).unwrap().value;
        let e = p_conn_exact(&tv(&[4]), n, &one(2.0)).unwrap().value;
        assert!((b - want).abs() < 1e-15 && (e - want).abs() < 1e-15);
    }

    #[test]
    fn clamped_probability_is_connected() {
        let r = p_conn_exact(&tv(&[5]), 3, &one(10.0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        let e = p_conn_explore(&tv(&[5]), 3, &one(10.0)).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exploration_handles_tiny_probabilities() {
        // p_n(k) ≈ n^{1−k} τ(k) for large n; the DP alone cannot resolve this.
        let n = 1_000_000;
        let k = tv(&[12]);
        let r = p_conn_exact(&k, n, &one(2.0)).unwrap();
        assert_eq!(r.method, ConnMethod::Exploration);
        let b = p_conn_bounds(&k, n, &one(2.0), None, None).unwrap();
        assert!(r.value <= b.est_upper && r.value >= b.est_lower);
        assert!((r.value / b.est_upper - 1.0).abs() < 5.0 * 144.0 / n as f64);
    }

    #[test]
    fn bounds_simple_cases() {
        // The lower factor keeps its exponent |k|²/2 even for |k| = 1.
        let b = p_conn_bounds(&tv(&[1]), 7, &one(2.0), None, None).unwrap();
        assert_eq!(b.est_upper, 1.0);
        assert!((b.est_lower - (5.0f64 / 7.0).sqrt()).abs() < 1e-15);
        let b = p_conn_bounds(&tv(&[3]), 10, &one(1.0), None, None).unwrap();
        assert!((b.est_upper - 0.03).abs() < 1e-15);
        assert!(b.est_upper >= 0.028);
        assert!(b.est_lower <= 0.028);
        assert!(p_conn_bounds(&tv(&[0, 2]), 10, &DMatrix::from_element(2, 2, 1.0), Some(0), None).is_err());
    }

    #[test]
    fn binomial_bound_dominates() {
        let kappa = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 2.0]);
        for (k, m) in [([2u32, 1], [4u32, 3]), ([1, 1], [1, 5]), ([3, 0], [3, 2])] {
            let (k, m) = (tv(&k), tv(&m));
            let p = p_conn_exact(&k, 9, &kappa).unwrap().value;
            let r = default_anchor(k.counts());
            assert!(binom_upper(&k, &m, 9, &kappa, r).unwrap() >= p);
        }
        assert!(binom_upper(&tv(&[2, 1]), &tv(&[1, 1]), 9, &kappa, 0).is_err());
    }

    fn kernel(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(0.1f64..6.0, d * d).prop_map(move |v| {
            DMatrix::from_fn(d, d, |r, s| v[r.min(s) * d + r.max(s)])
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn exact_matches_brute(kappa in kernel(2), n in 2u64..40, a in 0u32..4, b in 0u32..4) {
            let k = tv(&[a, b]);
            prop_assume!(!k.is_zero() && k.total() <= 6);
            let e = p_conn_exact(&k, n, &kappa).unwrap().value;
            let x = p_conn_explore(&k, n, &kappa).unwrap().value;
            let br = p_conn_brute(&k, n, &kappa).unwrap().value;
            prop_assert!((e - br).abs() < 1e-12);
            prop_assert!((x - br).abs() < 1e-12);
        }

        #[test]
        fn anchor_independence(kappa in kernel(2), n in 2u64..50, a in 1u32..5, b in 1u32..5) {
            let k = tv(&[a, b]);
            let p0 = p_conn_exact_anchored(&k, n, &kappa, 0).unwrap().value;
            let p1 = p_conn_exact_anchored(&k, n, &kappa, 1).unwrap().value;
            prop_assert!((p0 - p1).abs() <= 1e-12 * p0.max(1e-300) + 1e-15);
        }
    }
}

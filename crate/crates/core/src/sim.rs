//! Sampling G(n, μⁿ, κ), component censuses, replicate batches and the
//! multi-type Poisson Galton–Watson tree.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{solve_dual, DualSolution, ValidatedModel, DEFAULT_DUAL_TOL};
use crate::tree::{h_weight, WeightForm};
use crate::typevec::TypeVector;

/// Name recorded in every output that depends on random numbers.
pub const PRNG_NAME: &str = "ChaCha8Rng seeded by SplitMix64";

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` derived from the master seed.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    let mut s = master;
    let a = splitmix64(&mut s);
    let mut t = a ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut t)
}

/// A ChaCha8 stream whose 256-bit key is four SplitMix64 outputs of `seed`.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    let mut s = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSample {
    pub n: u64,
    pub seed: u64,
    /// Vertices of type r occupy a contiguous block of `counts[r]` labels.
    pub counts: Vec<u64>,
    pub edges: Vec<(u32, u32)>,
    /// Number of geometric gaps drawn while generating the edges.
    pub candidate_skips: u64,
}

impl GraphSample {
    pub fn block_starts(&self) -> Vec<u64> {
        let mut starts = Vec::with_capacity(self.counts.len());
        let mut acc = 0;
        for &c in &self.counts {
            starts.push(acc);
            acc += c;
        }
        starts
    }

    pub fn type_of(&self) -> Vec<u32> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(r, &c)| std::iter::repeat_n(r as u32, c as usize))
            .collect()
    }
}

pub fn sample_graph(model: &ValidatedModel, seed: u64) -> GraphSample {
    let mut rng = rng_from_seed(seed);
    let counts = model.counts().to_vec();
    let d = counts.len();
    let mut starts = vec![0u64; d];
    for r in 1..d {
        starts[r] = starts[r - 1] + counts[r - 1];
    }
    let mut edges = Vec::new();
    let mut skips = 0u64;
    for r in 0..d {
        for s in r..d {
            let p = model.edge_prob(r, s);
            let (nr, ns) = (counts[r], counts[s]);
            let pairs = if r == s { nr * nr.saturating_sub(1) / 2 } else { nr * ns };
            if pairs == 0 {
                continue;
            }
            let mut emit = BlockDecoder::new(r == s, starts[r], starts[s], ns);
            if p >= 1.0 {
                for idx in 0..pairs {
                    edges.push(emit.decode(idx));
                }
                continue;
            }
            let geo = Geometric::new(p).expect("0 < p < 1");
            let mut idx: u64 = 0;
            let mut first = true;
            loop {
                let gap = geo.sample(&mut rng);
                skips += 1;
                let next = if first { Some(gap) } else { idx.checked_add(gap).and_then(|x| x.checked_add(1)) };
                first = false;
                match next {
                    Some(i) if i < pairs => {
                        idx = i;
                        edges.push(emit.decode(idx));
                    }
                    _ => break,
                }
            }
        }
    }
    GraphSample {
        n: model.n(),
        seed,
        counts,
        edges,
        candidate_skips: skips,
    }
}

/// Maps increasing linear pair indices of a block to vertex pairs.
struct BlockDecoder {
    same: bool,
    start_r: u64,
    start_s: u64,
    ns: u64,
    // Triangular decoding state: pairs (i, j), i < j, are ordered by j.
    j: u64,
    base: u64,
}

impl BlockDecoder {
    fn new(same: bool, start_r: u64, start_s: u64, ns: u64) -> Self {
        BlockDecoder {
            same,
            start_r,
            start_s,
            ns,
            j: 1,
            base: 0,
        }
    }

    fn decode(&mut self, idx: u64) -> (u32, u32) {
        if self.same {
            while idx >= self.base + self.j {
                self.base += self.j;
                self.j += 1;
            }
            let i = idx - self.base;
            ((self.start_r + i) as u32, (self.start_r + self.j) as u32)
        } else {
            let (a, b) = (idx / self.ns, idx % self.ns);
            ((self.start_r + a) as u32, (self.start_s + b) as u32)
        }
    }
}

/// t_n(k), the giant configuration and the component count C_n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCensus {
    #[serde(with = "census_map")]
    pub t: BTreeMap<TypeVector, u64>,
    pub giant: TypeVector,
    pub total: u64,
}

impl ComponentCensus {
    pub fn count(&self, k: &TypeVector) -> u64 {
        self.t.get(k).copied().unwrap_or(0)
    }

    /// Builds a census from the configurations of all components.
    pub fn from_components(components: impl IntoIterator<Item = TypeVector>) -> Self {
        let mut t = BTreeMap::new();
        for k in components {
            *t.entry(k).or_insert(0) += 1;
        }
        let giant = t
            .keys()
            .max_by(|a: &&TypeVector, b: &&TypeVector| a.total().cmp(&b.total()).then(a.cmp(b)))
            .cloned()
            .unwrap_or_else(|| TypeVector::zeros(0));
        let total = t.values().sum();
        ComponentCensus { t, giant, total }
    }
}

/// Serialises a census map as a list of `{k, count}` records.
pub mod census_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::typevec::TypeVector;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        k: TypeVector,
        count: u64,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<TypeVector, u64>, ser: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = map
            .iter()
            .map(|(k, &count)| Entry { k: k.clone(), count })
            .collect();
        v.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<TypeVector, u64>, D::Error> {
        let v = Vec::<Entry>::deserialize(de)?;
        Ok(v.into_iter().map(|e| (e.k, e.count)).collect())
    }
}

pub fn census(sample: &GraphSample) -> ComponentCensus {
    let n = sample.n as usize;
    let d = sample.counts.len();
    let mut uf = UnionFind::<u32>::new(n);
    for &(a, b) in &sample.edges {
        uf.union(a, b);
    }
    let types = sample.type_of();
    let mut per_root: Vec<Option<Vec<u32>>> = vec![None; n];
    for v in 0..n {
        let root = uf.find_mut(v as u32) as usize;
        per_root[root].get_or_insert_with(|| vec![0; d])[types[v] as usize] += 1;
    }
    let census = ComponentCensus::from_components(per_root.into_iter().flatten().map(TypeVector::new));
    // Conservation: Σ_k k·t_n(k) = μⁿn.
    let mut mass = vec![0u64; d];
    for (k, &c) in &census.t {
        for r in 0..d {
            mass[r] += u64::from(k.get(r)) * c;
        }
    }
    assert_eq!(mass, sample.counts, "census does not conserve vertex counts");
    census
}

/// One replicate's raw census summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: u64,
    pub seed: u64,
    pub giant: TypeVector,
    pub components: u64,
    pub tracked: Vec<u64>,
}

/// Centering constants: (μⁿ−c)n for the giant, h(k)n and qn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    #[serde(with = "crate::numeric::serde_vec")]
    pub giant: DVector<f64>,
    pub t: Vec<f64>,
    pub components: f64,
}

impl Centering {
    /// Centering constants of a model whose measure is the realised μⁿ.
    pub fn for_model(model: &ValidatedModel, dual: &DualSolution, ks: &[TypeVector]) -> Result<Centering> {
        let n = model.n() as f64;
        let giant = (model.mu() - &dual.c) * n;
        let t = ks
            .iter()
            .map(|k| Ok(h_weight(k, model.kappa(), model.mu(), WeightForm::Mu)?.h * n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Centering {
            giant,
            t,
            components: dual.q(model.kappa()) * n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusStats {
    pub replicates: usize,
    pub master_seed: u64,
    pub prng: String,
    pub tracked: Vec<TypeVector>,
    pub centering: Centering,
    pub records: Vec<ReplicateRecord>,
    /// Scaled statistics (X − center)/√n, one row per replicate.
    pub giant_scaled: Vec<Vec<f64>>,
    pub t_scaled: Vec<Vec<f64>>,
    pub components_scaled: Vec<f64>,
    pub giant_mean: Vec<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub giant_cov: DMatrix<f64>,
    pub t_mean: Vec<f64>,
    #[serde(with = "crate::numeric::serde_mat")]
    pub t_cov: DMatrix<f64>,
    pub components_mean: f64,
    pub components_var: f64,
}

/// Runs one replicate and summarises it.
pub fn run_replicate(model: &ValidatedModel, master_seed: u64, index: u64, ks: &[TypeVector]) -> ReplicateRecord {
    let seed = replicate_seed(master_seed, index);
    let c = census(&sample_graph(model, seed));
    ReplicateRecord {
        index,
        seed,
        giant: c.giant.clone(),
        components: c.total,
        tracked: ks.iter().map(|k| c.count(k)).collect(),
    }
}

/// Runs R replicates in parallel; the result does not depend on the number
/// of worker threads because reduction follows replicate order.
pub fn run_batch(
    model: &ValidatedModel,
    replicates: usize,
    master_seed: u64,
    ks: &[TypeVector],
) -> Result<CensusStats> {
    if replicates < 2 {
        return Err(Error::InsufficientReplicates {
            got: replicates,
            needed: 2,
        });
    }
    for k in ks {
        k.require_nonzero()?;
        k.require_dim(model.dim())?;
    }
    let realised = model.with_realized_measure();
    let dual = solve_dual(&realised, DEFAULT_DUAL_TOL)?;
    let centering = Centering::for_model(&realised, &dual, ks)?;
    let records: Vec<ReplicateRecord> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| run_replicate(model, master_seed, i, ks))
        .collect();
    Ok(summarise(model.n(), master_seed, ks, centering, records))
}

/// Aggregates replicate records in index order.
pub fn summarise(
    n: u64,
    master_seed: u64,
    ks: &[TypeVector],
    centering: Centering,
    records: Vec<ReplicateRecord>,
) -> CensusStats {
    let sqrt_n = (n as f64).sqrt();
    let giant_scaled: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            r.giant
                .as_f64()
                .iter()
                .zip(centering.giant.iter())
                .map(|(x, c)| (x - c) / sqrt_n)
                .collect()
        })
        .collect();
    let t_scaled: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            r.tracked
                .iter()
                .zip(&centering.t)
                .map(|(&x, c)| (x as f64 - c) / sqrt_n)
                .collect()
        })
        .collect();
    let components_scaled: Vec<f64> = records
        .iter()
        .map(|r| (r.components as f64 - centering.components) / sqrt_n)
        .collect();
    let (giant_mean, giant_cov) = mean_cov(&giant_scaled, centering.giant.len());
    let (t_mean, t_cov) = mean_cov(&t_scaled, ks.len());
    let cs: Vec<Vec<f64>> = components_scaled.iter().map(|&x| vec![x]).collect();
    let (cm, cv) = mean_cov(&cs, 1);
    CensusStats {
        replicates: records.len(),
        master_seed,
        prng: PRNG_NAME.to_string(),
        tracked: ks.to_vec(),
        centering,
        records,
        giant_scaled,
        t_scaled,
        components_scaled,
        giant_mean,
        giant_cov,
        t_mean,
        t_cov,
        components_mean: cm[0],
        components_var: cv[(0, 0)],
    }
}

/// Sample mean and unbiased sample covariance of the rows.
pub fn mean_cov(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, DMatrix<f64>) {
    let r = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / r;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for row in rows {
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    if rows.len() > 1 {
        cov /= r - 1.0;
    }
    (mean, cov)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GwOutcome {
    /// The tree died out; total progeny by type.
    Extinct { total: TypeVector },
    /// The population exceeded the cap.
    Explosion { population: u64 },
}

/// Multi-type Poisson Galton–Watson tree from one particle of `root`:
/// a type-s particle has Poisson(κ(s,r)μ_r) children of type r.
pub fn sample_gw(
    kappa: &DMatrix<f64>,
    mu: &DVector<f64>,
    root: usize,
    seed: u64,
    cap: u64,
) -> Result<GwOutcome> {
    let d = mu.len();
    if root >= d || kappa.nrows() != d {
        return Err(Error::PreconditionViolated(format!(
            "root type {root} out of range for {d} types"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut generation = vec![0u64; d];
    generation[root] = 1;
    let mut total = generation.clone();
    let mut size = 1u64;
    while generation.iter().any(|&g| g > 0) {
        let mut next = vec![0u64; d];
        for r in 0..d {
            let lambda: f64 = (0..d).map(|s| generation[s] as f64 * kappa[(s, r)] * mu[r]).sum();
            if lambda > 0.0 {
                next[r] = poisson(&mut rng, lambda);
            }
        }
        size += next.iter().sum::<u64>();
        if size > cap {
            return Ok(GwOutcome::Explosion { population: size });
        }
        for r in 0..d {
            total[r] += next[r];
        }
        generation = next;
    }
    Ok(GwOutcome::Extinct {
        total: TypeVector::new(total.iter().map(|&x| x as u32).collect()),
    })
}

pub(crate) fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    Poisson::new(lambda).expect("positive finite rate").sample(rng) as u64
}

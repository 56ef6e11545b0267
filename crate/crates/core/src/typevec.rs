//! Type configurations: nonnegative integer vectors indexed by vertex type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of vertices of each type in a component (or any vertex multiset).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeVector(Vec<u32>);

impl TypeVector {
    pub fn new(counts: Vec<u32>) -> Self {
        TypeVector(counts)
    }

    pub fn zeros(dim: usize) -> Self {
        TypeVector(vec![0; dim])
    }

    pub fn unit(dim: usize, r: usize) -> Self {
        let mut v = vec![0; dim];
        v[r] = 1;
        TypeVector(v)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// |k|, the total number of vertices.
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn get(&self, r: usize) -> u32 {
        self.0[r]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| f64::from(x)).collect()
    }

    /// Coordinatewise `self <= other`.
    pub fn le(&self, other: &TypeVector) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Expand into a vertex list x_1..x_|k| where type s appears k_s times.
    pub fn expand(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(s, &ks)| std::iter::repeat_n(s, ks as usize))
            .collect()
    }

    /// Reject the zero configuration, which never labels a component.
    pub fn require_nonzero(&self) -> Result<()> {
        if self.is_zero() {
            Err(Error::PreconditionViolated(
                "type vector must have |k| >= 1".into(),
            ))
        } else {
            Ok(())
        }
    }

    pub fn require_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::PreconditionViolated(format!(
                "type vector {self} has dimension {}, model has {dim} types",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl From<Vec<u32>> for TypeVector {
    fn from(v: Vec<u32>) -> Self {
        TypeVector(v)
    }
}

impl fmt::Display for TypeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for TypeVector {
    type Err = Error;

    /// Parses comma-separated counts, e.g. `2,1`.
    fn from_str(s: &str) -> Result<Self> {
        let counts = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::Config(format!("bad type vector `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TypeVector(counts))
    }
}

/// All vectors of dimension `dim` with coordinate sum `m`, in lexicographic order.
pub fn shell(dim: usize, m: u32) -> Vec<TypeVector> {
    fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<TypeVector>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(TypeVector(prefix.clone()));
            prefix.pop();
            return;
        }
        for x in 0..=left {
            prefix.push(x);
            rec(dim, left - x, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    rec(dim, m, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// Same as [`shell`], restricted to vectors bounded coordinatewise by `cap`.
pub fn bounded_shell(cap: &[u32], m: u32) -> Vec<TypeVector> {
    shell(cap.len(), m)
        .into_iter()
        .filter(|k| k.0.iter().zip(cap).all(|(a, b)| a <= b))
        .collect()
}

/// Mixed-radix indexing of the box {m : 0 <= m <= bound}.
#[derive(Debug, Clone)]
pub struct Lattice {
    bound: Vec<u32>,
    strides: Vec<usize>,
    len: usize,
}

impl Lattice {
    pub fn new(bound: &[u32]) -> Self {
        let mut strides = vec![0; bound.len()];
        let mut len = 1usize;
        for (s, &b) in bound.iter().enumerate() {
            strides[s] = len;
            len = len.saturating_mul(b as usize + 1);
        }
        Lattice {
            bound: bound.to_vec(),
            strides,
            len,
        }
    }

    /// Number of lattice points, saturating at `u64::MAX` instead of overflowing.
    pub fn size(bound: &[u32]) -> u64 {
        bound
            .iter()
            .fold(1u64, |acc, &b| acc.saturating_mul(u64::from(b) + 1))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bound(&self) -> &[u32] {
        &self.bound
    }

    pub fn index(&self, m: &[u32]) -> usize {
        m.iter().zip(&self.strides).map(|(&x, &st)| x as usize * st).sum()
    }

    pub fn point(&self, mut idx: usize) -> Vec<u32> {
        let mut out = vec![0; self.bound.len()];
        for (s, &b) in self.bound.iter().enumerate() {
            let radix = b as usize + 1;
            out[s] = (idx % radix) as u32;
            idx /= radix;
        }
        out
    }

    pub fn stride(&self, s: usize) -> usize {
        self.strides[s]
    }

    /// Every sub-vector m' <= m (including 0 and m itself), as lattice indices.
    pub fn sub_indices(&self, m: &[u32]) -> Vec<usize> {
        let inner = Lattice::new(m);
        (0..inner.len())
            .map(|i| self.index(&inner.point(i)))
            .collect()
    }
}

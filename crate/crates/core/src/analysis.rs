//! Diagnostics: exact joint and marginal KL on enumerable snapshot spaces,
//! Jaccard continuity of snapshot sequences, and on-disk footprint.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graphstore::Adjacency;

/// Largest enumerable outcome space `s^T`.
pub const MAX_OUTCOMES: usize = 4096;

/// Distribution over all length-`T` sequences of snapshots drawn from an
/// alphabet of size `s`. Outcome `(g_1, …, g_T)` has index
/// `Σ_t g_t · s^(T−1−t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamicDistribution {
    alphabet: usize,
    steps: usize,
    probs: Vec<f64>,
}

impl DiscreteDynamicDistribution {
    pub fn new(alphabet: usize, steps: usize, probs: Vec<f64>) -> Result<Self> {
        let size = outcome_count(alphabet, steps)?;
        if probs.len() != size {
            return Err(Error::shape("DiscreteDynamicDistribution", &[size], &[probs.len()]));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { alphabet, steps, probs })
    }

    /// Product of independent per-step marginals.
    pub fn product(marginals: &[Vec<f64>]) -> Result<Self> {
        let steps = marginals.len();
        let alphabet = marginals.first().map_or(0, Vec::len);
        if marginals.iter().any(|m| m.len() != alphabet) {
            return Err(Error::InvalidArgument("marginals must share one alphabet".into()));
        }
        let size = outcome_count(alphabet, steps)?;
        let probs = (0..size)
            .map(|i| {
                decode(i, alphabet, steps)
                    .iter()
                    .zip(marginals)
                    .map(|(&g, m)| m[g])
                    .product()
            })
            .collect();
        Self::new(alphabet, steps, probs)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, outcome: &[usize]) -> f64 {
        self.probs[outcome.iter().fold(0, |acc, &g| acc * self.alphabet + g)]
    }

    /// Marginal of snapshot `t` by exact summation.
    pub fn marginal(&self, t: usize) -> Result<Vec<f64>> {
        if t >= self.steps {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.steps,
            });
        }
        let mut out = vec![0.0; self.alphabet];
        for (i, &p) in self.probs.iter().enumerate() {
            out[decode(i, self.alphabet, self.steps)[t]] += p;
        }
        Ok(out)
    }
}

fn outcome_count(alphabet: usize, steps: usize) -> Result<usize> {
    if alphabet == 0 || steps == 0 {
        return Err(Error::InvalidArgument("alphabet and length must be positive".into()));
    }
    let mut size = 1usize;
    for _ in 0..steps {
        size = size.saturating_mul(alphabet);
        if size > MAX_OUTCOMES {
            return Err(Error::InvalidArgument(format!(
                "outcome space {alphabet}^{steps} exceeds {MAX_OUTCOMES}"
            )));
        }
    }
    Ok(size)
}

fn decode(mut index: usize, alphabet: usize, steps: usize) -> Vec<usize> {
    let mut out = vec![0; steps];
    for t in (0..steps).rev() {
        out[t] = index % alphabet;
        index /= alphabet;
    }
    out
}

/// KL divergence value; mass where the reference has none is `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_infinite(self) -> bool {
        matches!(self, Divergence::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(v),
            Divergence::Infinite => None,
        }
    }
}

impl std::ops::Add for Divergence {
    type Output = Divergence;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Divergence::Finite(a), Divergence::Finite(b)) => Divergence::Finite(a + b),
            _ => Divergence::Infinite,
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Finite(v) => write!(f, "{v}"),
            Divergence::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Divergence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Divergence::Finite(v) => s.serialize_f64(*v),
            Divergence::Infinite => s.serialize_str("inf"),
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> Divergence {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Divergence::Infinite;
        }
        total += a * (a / b).ln();
    }
    Divergence::Finite(total)
}

fn same_space(p: &DiscreteDynamicDistribution, q: &DiscreteDynamicDistribution) -> Result<()> {
    if p.alphabet != q.alphabet || p.steps != q.steps {
        return Err(Error::InvalidArgument(format!(
            "outcome spaces differ: {}^{} vs {}^{}",
            p.alphabet, p.steps, q.alphabet, q.steps
        )));
    }
    Ok(())
}

/// `KL(P ‖ Q)` over whole sequences.
pub fn kl_joint(p: &DiscreteDynamicDistribution, q: &DiscreteDynamicDistribution) -> Result<Divergence> {
    same_space(p, q)?;
    Ok(kl(&p.probs, &q.probs))
}

/// `Σ_t KL(P_t ‖ Q_t)` over per-snapshot marginals.
pub fn kl_marginal_sum(p: &DiscreteDynamicDistribution, q: &DiscreteDynamicDistribution) -> Result<Divergence> {
    same_space(p, q)?;
    let mut total = Divergence::Finite(0.0);
    for t in 0..p.steps {
        total = total + kl(&p.marginal(t)?, &q.marginal(t)?);
    }
    Ok(total)
}

/// `|E_a ∩ E_b| / |E_a ∪ E_b|`, 1 for two empty edge sets.
pub fn jaccard(a: &Adjacency, b: &Adjacency) -> f64 {
    let ea: BTreeSet<_> = a.edges().iter().collect();
    let eb: BTreeSet<_> = b.edges().iter().collect();
    let union = ea.union(&eb).count();
    if union == 0 {
        return 1.0;
    }
    ea.intersection(&eb).count() as f64 / union as f64
}

/// Jaccard similarity between consecutive snapshots (`T − 1` entries).
pub fn jaccard_continuity(snapshots: &[Adjacency]) -> Vec<f64> {
    snapshots.windows(2).map(|w| jaccard(&w[0], &w[1])).collect()
}

/// Total bytes of the files under a dataset directory.
pub fn storage_size(path: &Path) -> Result<u64> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(meta.len());
    }
    let mut total = 0;
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        total += storage_size(&entry.path())?;
    }
    Ok(total)
}

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Adjacency, DynamicGraph, Split};
use crate::error::{Error, Result};
use crate::gradflow::Tensor;
use crate::scalar::Scalar;

/// Dynamic stochastic block model with drifting Gaussian class features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub num_nodes: usize,
    pub num_steps: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Edge probability between two nodes of the same class.
    pub block_density: f64,
    /// Edge probability between nodes of different classes.
    pub cross_density: f64,
    /// Fraction of node pairs whose edge state is redrawn at each new step.
    pub drift_rate: f64,
    /// Scale of the class-mean vectors.
    pub class_separation: f64,
    /// Per-coordinate standard deviation of node features around the class mean.
    pub feature_noise: f64,
    /// Per-step displacement length of each class mean.
    pub mean_drift: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            num_nodes: 300,
            num_steps: 6,
            num_classes: 3,
            feature_dim: 16,
            block_density: 0.05,
            cross_density: 0.005,
            drift_rate: 0.1,
            class_separation: 1.0,
            feature_noise: 1.0,
            mean_drift: 0.25,
            train_fraction: 0.5,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("block_density", self.block_density)?;
        prob("cross_density", self.cross_density)?;
        prob("drift_rate", self.drift_rate)?;
        prob("train_fraction", self.train_fraction)?;
        prob("val_fraction", self.val_fraction)?;
        if self.train_fraction + self.val_fraction > 1.0 {
            return Err(Error::InvalidArgument("train_fraction + val_fraction exceeds 1".into()));
        }
        if self.num_nodes == 0 || self.num_steps == 0 || self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("n, T, C and d must be positive".into()));
        }
        if self.num_classes > self.num_nodes {
            return Err(Error::InvalidArgument("more classes than nodes".into()));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("feature_noise", self.feature_noise),
            ("mean_drift", self.mean_drift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Class of node `v`: contiguous equal-size blocks.
fn block_of(v: usize, n: usize, c: usize) -> usize {
    v * c / n
}

/// Samples a dataset. Output depends only on `params` (including the seed);
/// features are rounded to f32 so they survive the on-disk format unchanged.
pub fn generate_synthetic<F: Scalar>(params: &SyntheticParams) -> Result<DynamicGraph<F>> {
    params.validate()?;
    let (n, steps, c, d) = (
        params.num_nodes,
        params.num_steps,
        params.num_classes,
        params.feature_dim,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let labels: Vec<usize> = (0..n).map(|v| block_of(v, n, c)).collect();

    // Edge states per unordered pair, redrawn with probability drift_rate per step.
    let pair_prob = |u: usize, v: usize| {
        if labels[u] == labels[v] {
            params.block_density
        } else {
            params.cross_density
        }
    };
    let mut state: Vec<bool> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for u in 0..n {
        for v in u + 1..n {
            state.push(rng.random::<f64>() < pair_prob(u, v));
        }
    }
    let mut snapshots = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 && params.drift_rate > 0.0 {
            let mut k = 0;
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < params.drift_rate {
                        state[k] = rng.random::<f64>() < pair_prob(u, v);
                    }
                    k += 1;
                }
            }
        }
        let mut edges = Vec::new();
        let mut k = 0;
        for u in 0..n {
            for v in u + 1..n {
                if state[k] {
                    edges.push((u, v));
                }
                k += 1;
            }
        }
        snapshots.push(Adjacency::from_edges(n, edges)?);
    }

    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| params.class_separation * gauss(&mut rng)).collect())
        .collect();
    let drifts: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            dir.into_iter().map(|x| params.mean_drift * x / norm).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(steps * n * d);
    for t in 0..steps {
        for &y in &labels {
            for k in 0..d {
                let mu = means[y][k] + t as f64 * drifts[y][k];
                let x = mu + params.feature_noise * gauss(&mut rng);
                data.push(F::from_f32(x as f32).expect("f32 converts"));
            }
        }
    }
    let features = Tensor::new(&[steps, n, d], data)?;

    let mut splits = vec![Split::None; n];
    for class in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&v| labels[v] == class).collect();
        members.shuffle(&mut rng);
        let n_train = (params.train_fraction * members.len() as f64).round() as usize;
        let n_val = (params.val_fraction * members.len() as f64).round() as usize;
        for (i, &v) in members.iter().enumerate() {
            splits[v] = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    DynamicGraph::new(c, snapshots, features, labels.into_iter().map(Some).collect(), splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_keeps_structure() {
        let p = SyntheticParams {
            num_nodes: 60,
            drift_rate: 0.0,
            block_density: 0.2,
            seed: 3,
            ..Default::default()
        };
        let g = generate_synthetic::<f64>(&p).unwrap();
        assert!(g.snapshots().windows(2).all(|w| w[0] == w[1]));
        assert!(g.snapshots()[0].num_edges() > 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SyntheticParams {
            num_nodes: 50,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_synthetic::<f64>(&p).unwrap(), generate_synthetic::<f64>(&p).unwrap());
        let q = SyntheticParams { seed: 12, ..p.clone() };
        assert_ne!(generate_synthetic::<f64>(&p).unwrap(), generate_synthetic::<f64>(&q).unwrap());
    }

    #[test]
    fn intra_block_edge_counts_match_binomial() {
        let p = SyntheticParams {
            num_nodes: 300,
            num_steps: 6,
            num_classes: 3,
            block_density: 0.05,
            cross_density: 0.005,
            seed: 5,
            ..Default::default()
        };
        let g = generate_synthetic::<f64>(&p).unwrap();
        let pairs = 100.0 * 99.0 / 2.0;
        let mean = 0.05 * pairs;
        let sd = (pairs * 0.05 * 0.95f64).sqrt();
        for snap in g.snapshots() {
            let mut per_block = [0usize; 3];
            for &(u, v) in snap.edges() {
                if u / 100 == v / 100 {
                    per_block[u / 100] += 1;
                }
            }
            let avg = per_block.iter().sum::<usize>() as f64 / 3.0;
            assert!((avg - mean).abs() < 3.0 * sd / 3f64.sqrt(), "avg {avg} vs {mean}");
        }
    }

    #[test]
    fn invalid_probabilities_rejected() {
        for p in [
            SyntheticParams { block_density: 1.5, ..Default::default() },
            SyntheticParams { cross_density: -0.1, ..Default::default() },
            SyntheticParams { drift_rate: 2.0, ..Default::default() },
        ] {
            assert!(generate_synthetic::<f64>(&p).is_err());
        }
    }

    #[test]
    fn stratified_splits() {
        let g = generate_synthetic::<f64>(&SyntheticParams::default()).unwrap();
        assert_eq!(g.mask(Split::Train).len(), 150);
        assert_eq!(g.mask(Split::Val).len(), 60);
        assert_eq!(g.mask(Split::Test).len(), 90);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::{assign_labels, class_counts};
use super::training_nodes;
use crate::error::{Error, Result};
use crate::gradflow::Tensor;
use crate::graphstore::{CondensedGraph, DynamicGraph};
use crate::scalar::Scalar;

/// Random per-class subset of labelled training nodes with their features
/// and induced snapshots. Returns the graph and the selected real nodes.
pub fn coreset_random_with_nodes<F: Scalar>(
    real: &DynamicGraph<F>,
    ratio: f64,
    seed: u64,
) -> Result<(CondensedGraph<F>, Vec<usize>)> {
    let (nodes, labels) = training_nodes(real);
    let c = real.num_classes();
    let target = class_counts(&assign_labels(&labels, c, ratio)?, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    let mut chosen_labels = Vec::new();
    for (class, &k) in target.iter().enumerate() {
        let mut pool: Vec<usize> = nodes
            .iter()
            .zip(&labels)
            .filter(|(_, &y)| y == class)
            .map(|(&v, _)| v)
            .collect();
        if pool.len() < k {
            return Err(Error::EmptySet(format!("class {class} has {} nodes, {k} requested", pool.len())));
        }
        pool.shuffle(&mut rng);
        pool.truncate(k);
        pool.sort_unstable();
        chosen_labels.extend(std::iter::repeat_n(class, k));
        chosen.extend(pool);
    }
    let (steps, d, n) = (real.num_steps(), real.feature_dim(), real.num_nodes());
    let m = chosen.len();
    let x = real.features().data();
    let features = Tensor::from_fn(&[steps, m, d], |i| {
        let (t, v, j) = (i / (m * d), (i / d) % m, i % d);
        x[(t * n + chosen[v]) * d + j]
    });
    let adjacency = real.snapshots().iter().map(|a| a.induced(&chosen)).collect();
    Ok((CondensedGraph::new(c, features, chosen_labels, adjacency)?, chosen))
}

pub fn coreset_random<F: Scalar>(real: &DynamicGraph<F>, ratio: f64, seed: u64) -> Result<CondensedGraph<F>> {
    coreset_random_with_nodes(real, ratio, seed).map(|(g, _)| g)
}

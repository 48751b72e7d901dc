use std::sync::Arc;

use super::Adjacency;
use crate::error::Result;
use crate::gradflow::Tensor;
use crate::scalar::Scalar;
use crate::sparse::Csr;

/// Symmetric-normalized propagation matrix `D̂^{-1/2}(A + I)D̂^{-1/2}` of one
/// snapshot. Degrees count the added self-loop, so isolated nodes map to an
/// identity row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<F> {
    csr: Arc<Csr<F>>,
}

impl<F: Scalar> TransitionMatrix<F> {
    pub fn csr(&self) -> &Arc<Csr<F>> {
        &self.csr
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.csr.get(i, j)
    }

    pub fn to_dense(&self) -> Tensor<F> {
        let n = self.num_nodes();
        Tensor::new(&[n, n], self.csr.to_dense()).expect("square")
    }
}

pub fn normalize_transition<F: Scalar>(a: &Adjacency) -> TransitionMatrix<F> {
    let n = a.num_nodes();
    let inv_sqrt: Vec<F> = a
        .degrees()
        .into_iter()
        .map(|d| F::one() / F::from_count(d + 1).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(n + 2 * a.num_edges());
    for (i, &s) in inv_sqrt.iter().enumerate() {
        triplets.push((i, i, s * s));
    }
    for &(u, v) in a.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    TransitionMatrix {
        csr: Arc::new(Csr::from_triplets(n, n, &triplets).expect("edge endpoints in range")),
    }
}

/// Normalizes a dense 0/1 snapshot; asymmetric or non-binary input is rejected.
pub fn normalize_dense<F: Scalar>(a: &Tensor<F>) -> Result<TransitionMatrix<F>> {
    Ok(normalize_transition(&Adjacency::from_dense(a)?))
}

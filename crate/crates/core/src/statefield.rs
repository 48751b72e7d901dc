//! State evolving field: joint spatial (normalized adjacency) and temporal
//! (α-blend) propagation of node features.
//!
//! Cells are indexed 0-based as `(t, k)` with `t ∈ 0..T` and `k ∈ 0..K`:
//!
//! ```text
//! H[0][k] = M_0^k X_0                               spatial boundary
//! H[t][0] = (1 − α) X_t + α X_{t−1}          t ≥ 1  temporal boundary
//! H[t][k] = α H[t−1][k] + (1 − α) M_t H[t][k−1]      t ≥ 1, k ≥ 1
//! ```
//!
//! Storage is `[K, T, nodes, d]`; a node's state flattens k-major, then t,
//! then feature dimension.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradflow::{concat, spmm, Tensor, Var};
use crate::graphstore::TransitionMatrix;
use crate::scalar::Scalar;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Number of spatial steps K.
    pub k: usize,
    /// Temporal coefficient α.
    pub alpha: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { k: 3, alpha: 0.5 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Materialized field `[K, T, nodes, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField<F> {
    data: Tensor<F>,
}

impl<F: Scalar> StateField<F> {
    pub fn tensor(&self) -> &Tensor<F> {
        &self.data
    }

    pub fn spatial_steps(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_steps(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_nodes(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn feature_dim(&self) -> usize {
        self.data.shape()[3]
    }

    /// Flattened state length `K·T·d`.
    pub fn state_len(&self) -> usize {
        self.spatial_steps() * self.num_steps() * self.feature_dim()
    }

    /// `nodes × d` block of cell `(t, k)`.
    pub fn cell(&self, t: usize, k: usize) -> &[F] {
        let (n, d) = (self.num_nodes(), self.feature_dim());
        let start = (k * self.num_steps() + t) * n * d;
        &self.data.data()[start..start + n * d]
    }

    /// `[K, T, d]` state of node `v`.
    pub fn node_state(&self, v: usize) -> Result<Tensor<F>> {
        let n = self.num_nodes();
        if v >= n {
            return Err(Error::IndexOutOfRange { index: v, len: n });
        }
        let d = self.feature_dim();
        let mut out = Vec::with_capacity(self.state_len());
        for k in 0..self.spatial_steps() {
            for t in 0..self.num_steps() {
                out.extend_from_slice(&self.cell(t, k)[v * d..(v + 1) * d]);
            }
        }
        Tensor::new(&[self.spatial_steps(), self.num_steps(), d], out)
    }

    /// Flattened states of `nodes`, one row each: `[nodes.len(), K·T·d]`.
    pub fn node_matrix(&self, nodes: &[usize]) -> Result<Tensor<F>> {
        if nodes.is_empty() {
            return Err(Error::EmptySet("node_matrix nodes".into()));
        }
        let mut data = Vec::with_capacity(nodes.len() * self.state_len());
        for &v in nodes {
            data.extend(self.node_state(v)?.into_data());
        }
        Tensor::new(&[nodes.len(), self.state_len()], data)
    }
}

fn check_features(steps: usize, nodes: usize, x_shape: &[usize]) -> Result<(usize, usize)> {
    let [t, n, d] = x_shape[..] else {
        return Err(Error::InvalidArgument(format!("features must be [T, n, d], got {x_shape:?}")));
    };
    if t != steps || n != nodes {
        return Err(Error::shape("build_field", &[steps, nodes], &[t, n]));
    }
    Ok((n, d))
}

/// Builds the field of a graph with constant transitions.
pub fn build_field<F: Scalar>(
    transitions: &[TransitionMatrix<F>],
    features: &Tensor<F>,
    cfg: &FieldConfig,
) -> Result<StateField<F>> {
    cfg.validate()?;
    let steps = transitions.len();
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one snapshot required".into()));
    }
    let nodes = transitions[0].num_nodes();
    if transitions.iter().any(|m| m.num_nodes() != nodes) {
        return Err(Error::InvalidArgument("transitions disagree on node count".into()));
    }
    let (n, d) = check_features(steps, nodes, features.shape())?;
    let alpha = F::lit(cfg.alpha);
    let beta = F::one() - alpha;
    let kk = cfg.k;
    let block = n * d;
    let mut data = vec![F::zero(); kk * steps * block];
    let x = |t: usize| &features.data()[t * block..(t + 1) * block];
    let idx = |t: usize, k: usize| (k * steps + t) * block;

    // t outer, k inner: each time slab depends only on the previous one
    for t in 0..steps {
        for k in 0..kk {
            let cell: Vec<F> = if t == 0 {
                if k == 0 {
                    x(0).to_vec()
                } else {
                    let prev = &data[idx(0, k - 1)..idx(0, k - 1) + block];
                    transitions[0].csr().mul_dense(prev, d)?
                }
            } else if k == 0 {
                x(t).iter().zip(x(t - 1)).map(|(&a, &b)| beta * a + alpha * b).collect()
            } else {
                let below = &data[idx(t, k - 1)..idx(t, k - 1) + block];
                let spatial = transitions[t].csr().mul_dense(below, d)?;
                let before = &data[idx(t - 1, k)..idx(t - 1, k) + block];
                before.iter().zip(&spatial).map(|(&h, &s)| alpha * h + beta * s).collect()
            };
            data[idx(t, k)..idx(t, k) + block].copy_from_slice(&cell);
        }
    }
    Ok(StateField {
        data: Tensor::new(&[kk, steps, n, d], data)?,
    })
}

/// Left-multiplication by a propagation matrix, constant or recorded.
#[derive(Debug, Clone)]
pub enum Propagator<'t, F> {
    Sparse(Arc<Csr<F>>),
    Dense(Var<'t, F>),
}

impl<'t, F: Scalar> Propagator<'t, F> {
    pub fn apply(&self, h: Var<'t, F>) -> Result<Var<'t, F>> {
        match self {
            Propagator::Sparse(m) => spmm(m, h),
            Propagator::Dense(m) => m.matmul(h),
        }
    }

    pub fn from_transition(m: &TransitionMatrix<F>) -> Self {
        Propagator::Sparse(Arc::clone(m.csr()))
    }
}

/// `D̂^{-1/2}(A + I)D̂^{-1/2}` of a recorded (possibly surrogate) spike matrix.
pub fn transition_from_spikes<'t, F: Scalar>(spikes: Var<'t, F>) -> Result<Var<'t, F>> {
    let shape = spikes.shape();
    let [m, c] = shape[..] else {
        return Err(Error::InvalidArgument(format!("spikes must be square, got {shape:?}")));
    };
    if m != c {
        return Err(Error::shape("transition_from_spikes", &shape, &[m, m]));
    }
    let tape = spikes.tape();
    let a_hat = spikes.add(tape.constant(Tensor::eye(m)))?;
    let inv_sqrt = a_hat.sum_last_axis()?.powf(-F::half());
    let outer = inv_sqrt.reshape(&[m, 1])?.matmul(inv_sqrt.reshape(&[1, m])?)?;
    a_hat.mul(outer)
}

/// Field recorded on a tape: `cells[t][k]` is a `nodes × d` variable.
#[derive(Debug, Clone)]
pub struct TapeField<'t, F> {
    cells: Vec<Vec<Var<'t, F>>>,
}

impl<'t, F: Scalar> TapeField<'t, F> {
    pub fn cell(&self, t: usize, k: usize) -> Var<'t, F> {
        self.cells[t][k]
    }

    /// Flattened node states `[nodes, K·T·d]` (k-major, then t, then d).
    pub fn node_matrix(&self) -> Result<Var<'t, F>> {
        let steps = self.cells.len();
        let kk = self.cells[0].len();
        let mut parts = Vec::with_capacity(steps * kk);
        for k in 0..kk {
            for t in 0..steps {
                parts.push(self.cells[t][k]);
            }
        }
        concat(&parts, 1)
    }

    /// Materializes the field values.
    pub fn to_field(&self) -> Result<StateField<F>> {
        let steps = self.cells.len();
        let kk = self.cells[0].len();
        let first = self.cells[0][0].shape();
        let mut data = Vec::new();
        for k in 0..kk {
            for t in 0..steps {
                data.extend(self.cells[t][k].value().into_data());
            }
        }
        Ok(StateField {
            data: Tensor::new(&[kk, steps, first[0], first[1]], data)?,
        })
    }
}

/// Differentiable field over recorded features `x_seq` (`[T, nodes, d]`).
pub fn build_field_tape<'t, F: Scalar>(
    propagators: &[Propagator<'t, F>],
    x_seq: Var<'t, F>,
    cfg: &FieldConfig,
) -> Result<TapeField<'t, F>> {
    cfg.validate()?;
    let steps = propagators.len();
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one snapshot required".into()));
    }
    let shape = x_seq.shape();
    let [t_len, n, d] = shape[..] else {
        return Err(Error::InvalidArgument(format!("features must be [T, n, d], got {shape:?}")));
    };
    if t_len != steps {
        return Err(Error::shape("build_field_tape", &shape, &[steps]));
    }
    let alpha = F::lit(cfg.alpha);
    let beta = F::one() - alpha;
    let x: Vec<Var<'t, F>> = (0..steps)
        .map(|t| x_seq.slice(0, t, 1)?.reshape(&[n, d]))
        .collect::<Result<_>>()?;
    let mut cells: Vec<Vec<Var<'t, F>>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut row: Vec<Var<'t, F>> = Vec::with_capacity(cfg.k);
        for k in 0..cfg.k {
            let cell = if t == 0 {
                if k == 0 {
                    x[0]
                } else {
                    propagators[0].apply(row[k - 1])?
                }
            } else if k == 0 {
                x[t].scale(beta).add(x[t - 1].scale(alpha))?
            } else {
                let spatial = propagators[t].apply(row[k - 1])?;
                cells[t - 1][k].scale(alpha).add(spatial.scale(beta))?
            };
            row.push(cell);
        }
        cells.push(row);
    }
    Ok(TapeField { cells })
}

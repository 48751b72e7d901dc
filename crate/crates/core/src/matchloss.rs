//! Class-wise kernel MMD between real and condensed state fields, logit
//! alignment against a frozen classifier, and the combined objective.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradflow::{sq_dist_raw, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `exp(−‖u−v‖² / 2σ²)`
    #[default]
    Rbf,
    /// `(⟨u,v⟩ / D + coef)^degree` with `D` the state length.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise real–condensed distance per class, frozen at the start.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
    pub poly_degree: u32,
    pub poly_coef: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Bandwidth::Median,
            poly_degree: 2,
            poly_coef: 1.0,
        }
    }
}

/// Kernel with its bandwidth fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel<F> {
    pub kind: KernelKind,
    pub sigma: F,
    pub degree: u32,
    pub coef: F,
}

impl<F: Scalar> Kernel<F> {
    pub fn rbf(sigma: F) -> Result<Self> {
        if !(sigma > F::zero()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self {
            kind: KernelKind::Rbf,
            sigma,
            degree: 2,
            coef: F::one(),
        })
    }

    pub fn from_config(cfg: &KernelConfig, sigma: F) -> Result<Self> {
        match cfg.kind {
            KernelKind::Rbf => Self::rbf(sigma),
            KernelKind::Polynomial => Ok(Self {
                kind: KernelKind::Polynomial,
                sigma,
                degree: cfg.poly_degree,
                coef: F::lit(cfg.poly_coef),
            }),
        }
    }

    pub fn eval(&self, u: &[F], v: &[F]) -> Result<F> {
        if u.len() != v.len() {
            return Err(Error::shape("kernel", &[u.len()], &[v.len()]));
        }
        Ok(match self.kind {
            KernelKind::Rbf => {
                let d2: F = u.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
                (-d2 / (F::lit(2.0) * self.sigma * self.sigma)).exp()
            }
            KernelKind::Polynomial => {
                let dot: F = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
                (dot / F::from_count(u.len()) + self.coef).powi(self.degree as i32)
            }
        })
    }

    /// Mean of all pairwise kernel values between the rows of `a` and `b`.
    pub fn mean_plain(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<F> {
        let (na, da) = a.dims2()?;
        let (nb, db) = b.dims2()?;
        if da != db {
            return Err(Error::shape("class_kernel_mean", a.shape(), b.shape()));
        }
        let mut total = F::zero();
        match self.kind {
            KernelKind::Rbf => {
                let scale = -F::one() / (F::lit(2.0) * self.sigma * self.sigma);
                for d2 in sq_dist_raw(a.data(), b.data(), na, nb, da) {
                    total = total + (d2 * scale).exp();
                }
            }
            KernelKind::Polynomial => {
                for i in 0..na {
                    for j in 0..nb {
                        total = total + self.eval(&a.data()[i * da..(i + 1) * da], &b.data()[j * db..(j + 1) * db])?;
                    }
                }
            }
        }
        Ok(total / F::from_count(na * nb))
    }

    /// Recorded kernel mean between the rows of two matrices.
    pub fn mean_tape<'t>(&self, a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
        let gram = match self.kind {
            KernelKind::Rbf => {
                let scale = -F::one() / (F::lit(2.0) * self.sigma * self.sigma);
                a.sq_dist(b)?.scale(scale).exp()
            }
            KernelKind::Polynomial => {
                let dim = F::from_count(a.shape()[1]);
                a.matmul(b.t()?)?
                    .scale(F::one() / dim)
                    .add_scalar(self.coef)
                    .powf(F::from_count(self.degree as usize))
            }
        };
        Ok(gram.mean())
    }
}

/// `𝒦 = (1/|A||B|) Σ_a Σ_b k(a, b)` over explicit state sets.
pub fn class_kernel_mean<F: Scalar>(set_a: &[Vec<F>], set_b: &[Vec<F>], kernel: &Kernel<F>) -> Result<F> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::EmptySet("class_kernel_mean operand".into()));
    }
    let mut total = F::zero();
    for a in set_a {
        for b in set_b {
            total = total + kernel.eval(a, b)?;
        }
    }
    Ok(total / F::from_count(set_a.len() * set_b.len()))
}

/// Median of the pairwise distances between rows of `a` and rows of `b`.
/// Falls back to 1 when every distance is zero.
pub fn median_bandwidth<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<F> {
    let (na, da) = a.dims2()?;
    let (nb, db) = b.dims2()?;
    if da != db {
        return Err(Error::shape("median_bandwidth", a.shape(), b.shape()));
    }
    let mut d: Vec<F> = sq_dist_raw(a.data(), b.data(), na, nb, da)
        .into_iter()
        .map(|x| x.sqrt())
        .collect();
    d.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
    let n = d.len();
    let med = if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) * F::half()
    };
    Ok(if med > F::zero() { med } else { F::one() })
}

/// Per-class node indices on both sides, with class weights η.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition<F> {
    pub real: Vec<Vec<usize>>,
    pub condensed: Vec<Vec<usize>>,
    pub weights: Vec<F>,
}

impl<F: Scalar> ClassPartition<F> {
    /// `real_labels` pairs node index with class for the labelled training
    /// nodes; `condensed_labels[i]` is the class of condensed node `i`.
    /// Weights are the real-side class proportions.
    pub fn new(real_labels: &[(usize, usize)], condensed_labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut real = vec![Vec::new(); num_classes];
        for &(v, c) in real_labels {
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!("class {c} out of range")));
            }
            real[c].push(v);
        }
        let mut condensed = vec![Vec::new(); num_classes];
        for (i, &c) in condensed_labels.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!("class {c} out of range")));
            }
            condensed[c].push(i);
        }
        let total = real_labels.len();
        if total == 0 {
            return Err(Error::NoLabeledNodes);
        }
        for c in 0..num_classes {
            if !condensed[c].is_empty() && real[c].is_empty() {
                return Err(Error::EmptySet(format!("class {c} has condensed nodes but no real nodes")));
            }
            if condensed[c].is_empty() && !real[c].is_empty() {
                return Err(Error::EmptySet(format!("class {c} has real nodes but no condensed nodes")));
            }
        }
        let weights = real
            .iter()
            .map(|r| F::from_count(r.len()) / F::from_count(total))
            .collect();
        Ok(Self {
            real,
            condensed,
            weights,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Classes that take part in the loss.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes()).filter(|&c| !self.real[c].is_empty())
    }
}

/// Real-side class state matrices with optional per-iteration subsampling.
#[derive(Debug, Clone)]
pub struct RealStates<F> {
    per_class: Vec<Option<Tensor<F>>>,
    cap: usize,
    self_terms: Vec<Option<F>>,
}

impl<F: Scalar> RealStates<F> {
    /// `states[c]` holds the flattened states of the real class-`c` nodes.
    pub fn new(states: Vec<Option<Tensor<F>>>, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("real-side sample cap must be positive".into()));
        }
        let n = states.len();
        Ok(Self {
            per_class: states,
            cap,
            self_terms: vec![None; n],
        })
    }

    pub fn class(&self, c: usize) -> Option<&Tensor<F>> {
        self.per_class[c].as_ref()
    }

    /// Draws at most `cap` rows per class (all rows when the class is small).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<Option<(Tensor<F>, bool)>> {
        self.per_class
            .iter()
            .map(|s| {
                s.as_ref().map(|t| {
                    let (rows, dim) = t.dims2().expect("class states are matrices");
                    if rows <= self.cap {
                        (t.clone(), false)
                    } else {
                        let mut idx = sample(rng, rows, self.cap).into_vec();
                        idx.sort_unstable();
                        let mut data = Vec::with_capacity(self.cap * dim);
                        for i in idx {
                            data.extend_from_slice(&t.data()[i * dim..(i + 1) * dim]);
                        }
                        (Tensor::new(&[self.cap, dim], data).expect("sampled shape"), true)
                    }
                })
            })
            .collect()
    }
}

/// Frozen per-class kernels (one bandwidth per class).
#[derive(Debug, Clone)]
pub struct ClassKernels<F> {
    pub kernels: Vec<Option<Kernel<F>>>,
}

impl<F: Scalar> ClassKernels<F> {
    /// Resolves bandwidths from the initial real and condensed class states.
    pub fn resolve(
        cfg: &KernelConfig,
        real: &RealStates<F>,
        condensed_states: &Tensor<F>,
        partition: &ClassPartition<F>,
    ) -> Result<Self> {
        let dim = condensed_states.dims2()?.1;
        let kernels = (0..partition.num_classes())
            .map(|c| {
                let Some(r) = real.class(c) else { return Ok(None) };
                let sigma = match cfg.bandwidth {
                    Bandwidth::Fixed(s) => F::lit(s),
                    Bandwidth::Median => {
                        let rows = &partition.condensed[c];
                        let mut data = Vec::with_capacity(rows.len() * dim);
                        for &i in rows {
                            data.extend_from_slice(&condensed_states.data()[i * dim..(i + 1) * dim]);
                        }
                        median_bandwidth(r, &Tensor::new(&[rows.len(), dim], data)?)?
                    }
                };
                Kernel::from_config(cfg, sigma).map(Some)
            })
            .collect::<Result<_>>()?;
        Ok(Self { kernels })
    }
}

/// `L_dist = Σ_c η_c (𝒦_c^{TT} + 𝒦_c^{SS} − 2 𝒦_c^{TS})`, differentiable in
/// the condensed states (`m × K·T·d`).
pub fn dist_loss<'t, F: Scalar>(
    real: &mut RealStates<F>,
    condensed: Var<'t, F>,
    partition: &ClassPartition<F>,
    kernels: &ClassKernels<F>,
    rng: &mut impl Rng,
) -> Result<Var<'t, F>> {
    let tape = condensed.tape();
    let sampled = real.sample(rng);

    // real–real terms are constants; compute them in parallel and cache the
    // ones that never change
    let tt: Vec<Option<F>> = sampled
        .par_iter()
        .enumerate()
        .map(|(c, s)| -> Result<Option<F>> {
            let Some((states, subsampled)) = s else { return Ok(None) };
            if !subsampled {
                if let Some(v) = real.self_terms[c] {
                    return Ok(Some(v));
                }
            }
            let k = kernels.kernels[c]
                .as_ref()
                .ok_or_else(|| Error::EmptySet(format!("no kernel for class {c}")))?;
            Ok(Some(k.mean_plain(states, states)?))
        })
        .collect::<Result<_>>()?;
    for (c, s) in sampled.iter().enumerate() {
        if let Some((_, false)) = s {
            real.self_terms[c] = tt[c];
        }
    }

    let mut total: Option<Var<'t, F>> = None;
    for c in partition.active() {
        let (states, _) = sampled[c]
            .as_ref()
            .ok_or_else(|| Error::EmptySet(format!("real class {c} has no states")))?;
        let kernel = kernels.kernels[c].as_ref().expect("resolved for active classes");
        if partition.condensed[c].is_empty() {
            return Err(Error::EmptySet(format!("condensed class {c} is empty")));
        }
        let s_c = condensed.index_select(&partition.condensed[c])?;
        let r_c = tape.constant(states.clone());
        let k_ss = kernel.mean_tape(s_c, s_c)?;
        let k_ts = kernel.mean_tape(r_c, s_c)?;
        let term = k_ss
            .sub(k_ts.scale(F::lit(2.0)))?
            .add_scalar(tt[c].expect("active class"))
            .scale(partition.weights[c]);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    total.ok_or_else(|| Error::EmptySet("no active classes".into()))
}

pub const LOGIT_EPS: f64 = 1e-12;

/// `Σ_i −log p_i[y_i]` with probabilities clamped at `1e-12`.
pub fn logit_loss<'t, F: Scalar>(soft_labels: Var<'t, F>, labels: &[usize]) -> Result<Var<'t, F>> {
    let shape = soft_labels.shape();
    let [m, c] = shape[..] else {
        return Err(Error::InvalidArgument(format!("soft labels must be m × C, got {shape:?}")));
    };
    if labels.len() != m {
        return Err(Error::shape("logit_loss", &shape, &[labels.len()]));
    }
    if !soft_labels.value().is_finite() {
        return Err(Error::NonFinite("soft labels".into()));
    }
    let mut onehot = Tensor::zeros(&[m, c]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::IndexOutOfRange { index: y, len: c });
        }
        onehot.data_mut()[i * c + y] = F::one();
    }
    let picked = soft_labels
        .mul(soft_labels.tape().constant(onehot))?
        .sum_last_axis()?;
    Ok(picked.clamp_min(F::lit(LOGIT_EPS)).log().sum().neg())
}

/// `L = L_dist + γ L_logit`
pub fn total_loss<'t, F: Scalar>(l_dist: Var<'t, F>, l_logit: Var<'t, F>, gamma: F) -> Result<Var<'t, F>> {
    if gamma < F::zero() {
        return Err(Error::InvalidArgument(format!("gamma must be non-negative, got {gamma}")));
    }
    l_dist.add(l_logit.scale(gamma))
}

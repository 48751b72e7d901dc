//! Evolving structure of the condensed graph from leaky integrate-and-fire
//! dynamics over node pairs.
//!
//! Each unordered pair `(i, j)` carries a membrane voltage. At every step the
//! voltage leaks toward `u_reset` while integrating a feature affinity Ψ,
//! fires an edge when it crosses the threshold, and is partially reset after
//! firing:
//!
//! ```text
//! Û = U + τ (u_reset − U + Ψ)
//! Ã = Θ(Û − u_th)
//! U ← Û − τ Ã ⊙ (Û − u_reset)
//! ```
//!
//! The threshold uses the straight-through surrogate so τ, u_th and the
//! features all receive gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradflow::{Gradients, SpikeMode, Tape, Tensor, Var};
use crate::graphstore::Adjacency;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiMode {
    /// `⟨x_i, x_j⟩ / √d`
    #[default]
    Dot,
    /// `x_iᵀ ((W + Wᵀ)/2) x_j / √d`
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeConfig {
    /// Surrogate sharpness β.
    pub beta: f64,
    pub u_reset: f64,
    pub psi_mode: PsiMode,
    /// One learnable threshold per step instead of a shared scalar.
    pub per_step_threshold: bool,
    /// Fraction of pairs that fire at the first step on the initial features.
    pub init_fire_rate: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            u_reset: 0.0,
            psi_mode: PsiMode::Dot,
            per_step_threshold: false,
            init_fire_rate: 0.1,
        }
    }
}

/// Learnable LIF structure generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingGenerator<F> {
    /// τ_m = sigmoid(tau_raw)
    pub tau_raw: Tensor<F>,
    /// Shape `[]` (shared) or `[T]` (per step).
    pub u_th_raw: Tensor<F>,
    /// `d × d`, bilinear mode only.
    pub psi_weight: Option<Tensor<F>>,
    pub u_reset: F,
    pub beta: F,
    pub psi_mode: PsiMode,
    pub spike_mode: SpikeMode,
    feature_dim: usize,
}

/// Pairwise membrane voltages `m × m`, symmetric with a zero diagonal.
#[derive(Debug, Clone, Copy)]
pub struct MembraneState<'t, F> {
    pub voltage: Var<'t, F>,
    pub step: usize,
}

/// Generator parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGenerator<'t, F> {
    pub tau_raw: Var<'t, F>,
    pub u_th: Var<'t, F>,
    pub psi_weight: Option<Var<'t, F>>,
    tau: Var<'t, F>,
    cfg: &'t SpikingGenerator<F>,
}

/// Gradients of the generator parameters, laid out like the parameters.
#[derive(Debug, Clone)]
pub struct GeneratorGrads<F> {
    pub tau_raw: Tensor<F>,
    pub u_th_raw: Tensor<F>,
    pub psi_weight: Option<Tensor<F>>,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn off_diagonal<F: Scalar>(m: usize) -> Tensor<F> {
    Tensor::from_fn(&[m, m], |i| if i / m == i % m { F::zero() } else { F::one() })
}

impl<F: Scalar> SpikingGenerator<F> {
    /// Generator with explicit parameters (`u_th` shared across steps).
    pub fn new(feature_dim: usize, tau_raw: F, u_th: F, cfg: &SpikeConfig) -> Result<Self> {
        if !(cfg.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", cfg.beta)));
        }
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        Ok(Self {
            tau_raw: Tensor::scalar(tau_raw),
            u_th_raw: Tensor::scalar(u_th),
            psi_weight: match cfg.psi_mode {
                PsiMode::Dot => None,
                PsiMode::Bilinear => Some(Tensor::eye(feature_dim)),
            },
            u_reset: F::lit(cfg.u_reset),
            beta: F::lit(cfg.beta),
            psi_mode: cfg.psi_mode,
            spike_mode: SpikeMode::Hard,
            feature_dim,
        })
    }

    /// τ_m = 0.5 and a threshold at the `(1 − init_fire_rate)` quantile of
    /// the first-step voltages on `x_seq`.
    pub fn initialize(x_seq: &Tensor<F>, cfg: &SpikeConfig) -> Result<Self> {
        let [steps, m, d] = x_seq.shape()[..] else {
            return Err(Error::InvalidArgument("x_seq must be [T, m, d]".into()));
        };
        let mut gen = Self::new(d, F::zero(), F::zero(), cfg)?;
        let tape = Tape::new();
        let bound = gen.bind(&tape);
        let x0 = tape.constant(x_seq.outer(0)?);
        let psi = bound.synaptic_input(x0)?;
        let u0 = bound.initial_state(m)?;
        let u_hat = bound.integrate(u0, psi)?.value();
        let mut pairs: Vec<F> = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .map(|(i, j)| u_hat.at2(i, j))
            .collect();
        let th = if pairs.is_empty() {
            F::one()
        } else {
            pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite voltages"));
            let rate = cfg.init_fire_rate.clamp(0.0, 1.0);
            let fire = ((rate * pairs.len() as f64).round() as usize).clamp(1, pairs.len());
            pairs[pairs.len() - fire]
        };
        gen.u_th_raw = if cfg.per_step_threshold {
            Tensor::full(&[steps], th)
        } else {
            Tensor::scalar(th)
        };
        Ok(gen)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn tau(&self) -> F {
        sigmoid(self.tau_raw.data()[0])
    }

    pub fn with_spike_mode(mut self, mode: SpikeMode) -> Self {
        self.spike_mode = mode;
        self
    }

    /// Parameter tensors in a fixed order: tau_raw, u_th_raw, then psi_weight.
    pub fn params(&self) -> Vec<&Tensor<F>> {
        let mut out = vec![&self.tau_raw, &self.u_th_raw];
        out.extend(self.psi_weight.as_ref());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.tau_raw, &mut self.u_th_raw];
        out.extend(self.psi_weight.as_mut());
        out
    }

    pub fn bind<'t>(&'t self, tape: &'t Tape<F>) -> BoundGenerator<'t, F> {
        let tau_raw = tape.param(self.tau_raw.clone());
        BoundGenerator {
            tau_raw,
            u_th: tape.param(self.u_th_raw.clone()),
            psi_weight: self.psi_weight.as_ref().map(|w| tape.param(w.clone())),
            tau: tau_raw.sigmoid(),
            cfg: self,
        }
    }

    /// Binary snapshots for `x_seq` (`[T, m, d]`), always with the hard threshold.
    pub fn realize(&self, x_seq: &Tensor<F>) -> Result<Vec<Adjacency>> {
        let hard = self.clone().with_spike_mode(SpikeMode::Hard);
        let tape = Tape::new();
        let bound = hard.bind(&tape);
        let spikes = bound.generate(tape.constant(x_seq.clone()))?;
        spikes.iter().map(|s| Adjacency::from_dense(&s.value())).collect()
    }
}

impl<'t, F: Scalar> BoundGenerator<'t, F> {
    pub fn tau(&self) -> Var<'t, F> {
        self.tau
    }

    pub fn grads(&self, g: &Gradients<F>) -> GeneratorGrads<F> {
        GeneratorGrads {
            tau_raw: g.wrt(self.tau_raw),
            u_th_raw: g.wrt(self.u_th),
            psi_weight: self.psi_weight.map(|w| g.wrt(w)),
        }
    }

    fn tape(&self) -> &'t Tape<F> {
        self.tau_raw.tape()
    }

    pub fn initial_state(&self, m: usize) -> Result<Var<'t, F>> {
        let u0 = Tensor::from_fn(&[m, m], |i| {
            if i / m == i % m {
                F::zero()
            } else {
                self.cfg.u_reset
            }
        });
        Ok(self.tape().constant(u0))
    }

    /// Ψ for one step's features `x_t` (`m × d`); symmetric, zero diagonal.
    pub fn synaptic_input(&self, x_t: Var<'t, F>) -> Result<Var<'t, F>> {
        let shape = x_t.shape();
        let [m, d] = shape[..] else {
            return Err(Error::InvalidArgument(format!("x_t must be m × d, got {shape:?}")));
        };
        if d != self.cfg.feature_dim {
            return Err(Error::shape("synaptic_input", &shape, &[m, self.cfg.feature_dim]));
        }
        let scale = F::one() / F::from_count(d).sqrt();
        let raw = match (self.cfg.psi_mode, self.psi_weight) {
            (PsiMode::Bilinear, Some(w)) => {
                let w_sym = w.add(w.t()?)?.scale(F::half());
                let p = x_t.matmul(w_sym)?.matmul(x_t.t()?)?;
                // average with the transpose for bit-exact symmetry
                p.add(p.t()?)?.scale(F::half())
            }
            _ => x_t.matmul(x_t.t()?)?,
        };
        raw.scale(scale).mul(self.tape().constant(off_diagonal(m)))
    }

    /// Û = U + τ (u_reset − U + Ψ)
    pub fn integrate(&self, u: Var<'t, F>, psi: Var<'t, F>) -> Result<Var<'t, F>> {
        let drive = u.neg().add_scalar(self.cfg.u_reset).add(psi)?;
        u.add(self.tau.mul(drive)?)
    }

    fn threshold_at(&self, step: usize) -> Result<Var<'t, F>> {
        if self.u_th.shape().is_empty() {
            Ok(self.u_th)
        } else {
            self.u_th.slice(0, step, 1)?.reshape(&[])
        }
    }

    /// Ã = Θ(Û − u_th), diagonal forced to zero.
    pub fn fire(&self, u_hat: Var<'t, F>, step: usize) -> Result<Var<'t, F>> {
        let m = u_hat.shape()[0];
        let spikes = u_hat
            .sub(self.threshold_at(step)?)?
            .heaviside_with(self.cfg.beta, self.cfg.spike_mode);
        spikes.mul(self.tape().constant(off_diagonal(m)))
    }

    /// U = Û − τ Ã ⊙ (Û − u_reset)
    pub fn soft_reset(&self, u_hat: Var<'t, F>, spikes: Var<'t, F>) -> Result<Var<'t, F>> {
        let overshoot = u_hat.add_scalar(-self.cfg.u_reset);
        u_hat.sub(self.tau.mul(spikes.mul(overshoot)?)?)
    }

    /// One integrate → fire → reset step. Returns the spikes and the next state.
    pub fn step(
        &self,
        state: MembraneState<'t, F>,
        x_t: Var<'t, F>,
    ) -> Result<(Var<'t, F>, MembraneState<'t, F>)> {
        let psi = self.synaptic_input(x_t)?;
        let u_hat = self.integrate(state.voltage, psi)?;
        let spikes = self.fire(u_hat, state.step)?;
        let voltage = self.soft_reset(u_hat, spikes)?;
        Ok((
            spikes,
            MembraneState {
                voltage,
                step: state.step + 1,
            },
        ))
    }

    /// Spike matrices for every step of `x_seq` (`[T, m, d]`).
    pub fn generate(&self, x_seq: Var<'t, F>) -> Result<Vec<Var<'t, F>>> {
        let shape = x_seq.shape();
        let [steps, m, d] = shape[..] else {
            return Err(Error::InvalidArgument(format!("x_seq must be [T, m, d], got {shape:?}")));
        };
        if self.u_th.shape().len() == 1 && self.u_th.shape()[0] != steps {
            return Err(Error::shape("generate", &self.u_th.shape(), &[steps]));
        }
        let mut state = MembraneState {
            voltage: self.initial_state(m)?,
            step: 0,
        };
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = x_seq.slice(0, t, 1)?.reshape(&[m, d])?;
            let (spikes, next) = self.step(state, x_t)?;
            out.push(spikes);
            state = next;
        }
        Ok(out)
    }
}

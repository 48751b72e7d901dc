//! Reference T-GCN backbone: a stack of graph convolutions per snapshot fed
//! into a GRU, classified from the final hidden state.

mod metrics;
mod train;

pub use metrics::{f1_scores, F1Scores};
pub use train::{evaluate, predict, soft_labels, train, train_with_report, TrainConfig, TrainReport};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, unpack, write_checkpoint};
use crate::error::{Error, Result};
use crate::gradflow::{Gradients, Tape, Tensor, Var};
use crate::graphstore::DynamicGraph;
use crate::scalar::Scalar;
use crate::statefield::Propagator;

#[derive(Debug, Clone, PartialEq)]
pub struct TGCNModel<F> {
    feature_dim: usize,
    hidden: usize,
    num_classes: usize,
    seed: u64,
    /// `d → h`, then `h → h` for the remaining layers.
    pub gcn_weights: Vec<Tensor<F>>,
    pub gru: GruParams<F>,
    pub classifier: Tensor<F>,
    pub classifier_bias: Tensor<F>,
}

/// Update (`z`), reset (`r`) and candidate (`h`) gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<F> {
    pub wz: Tensor<F>,
    pub uz: Tensor<F>,
    pub bz: Tensor<F>,
    pub wr: Tensor<F>,
    pub ur: Tensor<F>,
    pub br: Tensor<F>,
    pub wh: Tensor<F>,
    pub uh: Tensor<F>,
    pub bh: Tensor<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    kind: String,
    feature_dim: usize,
    hidden: usize,
    layers: usize,
    num_classes: usize,
    seed: u64,
}

fn glorot<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| F::lit(rng.random_range(-a..a)))
}

impl<F: Scalar> TGCNModel<F> {
    pub fn new(feature_dim: usize, hidden: usize, layers: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || hidden == 0 || layers == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dims must be positive (d={feature_dim}, h={hidden}, L={layers}, C={num_classes})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn_weights = (0..layers)
            .map(|l| glorot(&mut rng, if l == 0 { feature_dim } else { hidden }, hidden))
            .collect();
        let h = hidden;
        let gru = GruParams {
            wz: glorot(&mut rng, h, h),
            uz: glorot(&mut rng, h, h),
            bz: Tensor::zeros(&[h]),
            wr: glorot(&mut rng, h, h),
            ur: glorot(&mut rng, h, h),
            br: Tensor::zeros(&[h]),
            wh: glorot(&mut rng, h, h),
            uh: glorot(&mut rng, h, h),
            bh: Tensor::zeros(&[h]),
        };
        Ok(Self {
            feature_dim,
            hidden,
            num_classes,
            seed,
            gcn_weights,
            gru,
            classifier: glorot(&mut rng, h, num_classes),
            classifier_bias: Tensor::zeros(&[num_classes]),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.gcn_weights.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Parameters in declaration order: GCN layers, GRU gates, classifier.
    pub fn params(&self) -> Vec<&Tensor<F>> {
        let g = &self.gru;
        let mut out: Vec<&Tensor<F>> = self.gcn_weights.iter().collect();
        out.extend([&g.wz, &g.uz, &g.bz, &g.wr, &g.ur, &g.br, &g.wh, &g.uh, &g.bh]);
        out.extend([&self.classifier, &self.classifier_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let g = &mut self.gru;
        let mut out: Vec<&mut Tensor<F>> = self.gcn_weights.iter_mut().collect();
        out.extend([
            &mut g.wz, &mut g.uz, &mut g.bz, &mut g.wr, &mut g.ur, &mut g.br, &mut g.wh, &mut g.uh, &mut g.bh,
        ]);
        out.extend([&mut self.classifier, &mut self.classifier_bias]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Records the parameters on `tape`; frozen parameters are constants.
    pub fn bind<'t>(&self, tape: &'t Tape<F>, trainable: bool) -> BoundModel<'t, F> {
        let leaf = |t: &Tensor<F>| tape.leaf(t.clone(), trainable);
        BoundModel {
            params: self.params().into_iter().map(leaf).collect(),
            layers: self.num_layers(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            kind: "tgcn".into(),
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            layers: self.num_layers(),
            num_classes: self.num_classes,
            seed: self.seed,
        };
        write_checkpoint(path, &header, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, values): (ModelHeader, _) = read_checkpoint(path)?;
        if header.kind != "tgcn" {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                msg: format!("unexpected checkpoint kind {:?}", header.kind),
            });
        }
        let mut model = Self::new(header.feature_dim, header.hidden, header.layers, header.num_classes, header.seed)?;
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
        let tensors = unpack(path, &values, &shapes)?;
        for (p, t) in model.params_mut().into_iter().zip(tensors) {
            *p = t;
        }
        Ok(model)
    }

    /// Plain forward pass over a dynamic graph.
    pub fn logits(&self, graph: &DynamicGraph<F>) -> Result<Tensor<F>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let props: Vec<Propagator<F>> = graph.transitions().iter().map(Propagator::from_transition).collect();
        let x = tape.constant(graph.features().clone());
        Ok(bound.forward(&props, x)?.value())
    }
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel<'t, F> {
    params: Vec<Var<'t, F>>,
    layers: usize,
    feature_dim: usize,
}

impl<'t, F: Scalar> BoundModel<'t, F> {
    pub fn params(&self) -> &[Var<'t, F>] {
        &self.params
    }

    /// Gradients in declaration order.
    pub fn grads(&self, g: &Gradients<F>) -> Vec<Tensor<F>> {
        self.params.iter().map(|&p| g.wrt(p)).collect()
    }

    fn gru_param(&self, i: usize) -> Var<'t, F> {
        self.params[self.layers + i]
    }

    /// Spatial stack for one snapshot.
    pub fn gcn(&self, m: &Propagator<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let mut h = x;
        for l in 0..self.layers {
            h = gcn_layer(m, h, self.params[l], l + 1 == self.layers)?;
        }
        Ok(h)
    }

    /// One GRU step.
    pub fn gru(&self, x: Var<'t, F>, h: Var<'t, F>) -> Result<Var<'t, F>> {
        let p = |i| self.gru_param(i);
        let gate = |w: Var<'t, F>, u: Var<'t, F>, b: Var<'t, F>, hh: Var<'t, F>| -> Result<Var<'t, F>> {
            x.matmul(w)?.add(hh.matmul(u)?)?.add(b)
        };
        let z = gate(p(0), p(1), p(2), h)?.sigmoid();
        let r = gate(p(3), p(4), p(5), h)?.sigmoid();
        let n = gate(p(6), p(7), p(8), r.mul(h)?)?.tanh();
        // (1 − z)⊙n + z⊙h
        n.sub(z.mul(n)?)?.add(z.mul(h)?)
    }

    /// Logits `[nodes, C]` for features `x_seq` (`[T, nodes, d]`).
    pub fn forward(&self, propagators: &[Propagator<'t, F>], x_seq: Var<'t, F>) -> Result<Var<'t, F>> {
        let shape = x_seq.shape();
        let [steps, n, d] = shape[..] else {
            return Err(Error::InvalidArgument(format!("features must be [T, n, d], got {shape:?}")));
        };
        if d != self.feature_dim {
            return Err(Error::shape("forward", &shape, &[steps, n, self.feature_dim]));
        }
        if steps != propagators.len() || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} propagators for {steps} feature steps",
                propagators.len()
            )));
        }
        let tape = x_seq.tape();
        let hidden = self.gru_param(1).shape()[0];
        let mut h = tape.constant(Tensor::zeros(&[n, hidden]));
        for (t, m) in propagators.iter().enumerate() {
            let x_t = x_seq.slice(0, t, 1)?.reshape(&[n, d])?;
            let z = self.gcn(m, x_t)?;
            h = self.gru(z, h)?;
        }
        let w = self.params[self.params.len() - 2];
        let b = self.params[self.params.len() - 1];
        h.matmul(w)?.add(b)
    }
}

/// `ReLU(M·H·W)`, without the ReLU on the last spatial layer.
pub fn gcn_layer<'t, F: Scalar>(
    m: &Propagator<'t, F>,
    h: Var<'t, F>,
    w: Var<'t, F>,
    last: bool,
) -> Result<Var<'t, F>> {
    let out = m.apply(h.matmul(w)?)?;
    Ok(if last { out } else { out.relu() })
}

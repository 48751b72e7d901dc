use serde::{Deserialize, Serialize};

use super::metrics::{f1_scores, F1Scores};
use super::TGCNModel;
use crate::error::{Error, Result};
use crate::gradflow::{adam_step, AdamState, Tape, Tensor, Var};
use crate::graphstore::{DynamicGraph, Split};
use crate::scalar::Scalar;
use crate::statefield::Propagator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs without a validation Micro-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            patience: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument("hidden size and layer count must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("lr must be positive and weight decay non-negative".into()));
        }
        if self.epochs > 0 && self.patience > self.epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training cross-entropy per completed epoch.
    pub losses: Vec<f64>,
    /// Validation Micro-F1 per epoch (empty without a validation mask).
    pub val_micro: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
}

fn propagators<'t, F: Scalar>(graph: &DynamicGraph<F>) -> Vec<Propagator<'t, F>> {
    graph.transitions().iter().map(Propagator::from_transition).collect()
}

fn argmax_rows<F: Scalar>(logits: &Tensor<F>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn labeled(graph: &DynamicGraph<impl Scalar>, nodes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    nodes
        .iter()
        .filter_map(|&v| graph.labels()[v].map(|y| (v, y)))
        .unzip()
}

fn score(logits: &Tensor<impl Scalar>, nodes: &[usize], truth: &[usize], num_classes: usize) -> Result<F1Scores> {
    let pred = argmax_rows(logits);
    let picked: Vec<usize> = nodes.iter().map(|&v| pred[v]).collect();
    f1_scores(truth, &picked, num_classes)
}

/// Full-batch training with Adam on the train-mask cross-entropy.
pub fn train<F: Scalar>(graph: &DynamicGraph<F>, cfg: &TrainConfig) -> Result<TGCNModel<F>> {
    train_with_report(graph, cfg).map(|(m, _)| m)
}

/// As [`train`], also returning per-epoch bookkeeping. With a validation
/// mask the best-validation parameters are returned, otherwise the last.
pub fn train_with_report<F: Scalar>(graph: &DynamicGraph<F>, cfg: &TrainConfig) -> Result<(TGCNModel<F>, TrainReport)> {
    cfg.validate()?;
    let (train_nodes, train_y) = labeled(graph, &graph.mask(Split::Train));
    if train_nodes.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let (val_nodes, val_y) = labeled(graph, &graph.mask(Split::Val));
    let c = graph.num_classes();
    let mut model = TGCNModel::new(graph.feature_dim(), cfg.hidden, cfg.layers, c, cfg.seed)?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((model, report));
    }

    let mut onehot = Tensor::zeros(&[train_nodes.len(), c]);
    for (i, &y) in train_y.iter().enumerate() {
        onehot.data_mut()[i * c + y] = F::one();
    }
    let inv_n = F::one() / F::from_count(train_nodes.len());
    let mut adam = AdamState::default().with_weight_decay(F::lit(cfg.weight_decay));
    let lr = F::lit(cfg.lr);
    let mut best: Option<(f64, TGCNModel<F>)> = None;
    let mut wait = 0;

    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let bound = model.bind(&tape, true);
        let logits = bound.forward(&propagators(graph), tape.constant(graph.features().clone()))?;
        let logp = logits.index_select(&train_nodes)?.log_softmax()?;
        let loss = logp.mul(tape.constant(onehot.clone()))?.sum().scale(-inv_n);
        let loss_value = loss.item()?.as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                iteration: epoch,
                loss: loss_value,
            });
        }
        report.losses.push(loss_value);

        // validation scores the parameters that produced these logits
        let mut stop = false;
        if !val_nodes.is_empty() {
            let micro = score(&logits.value(), &val_nodes, &val_y, c)?.micro;
            report.val_micro.push(micro);
            if best.as_ref().is_none_or(|(b, _)| micro > *b) {
                best = Some((micro, model.clone()));
                report.best_epoch = Some(epoch);
                report.best_val = Some(micro);
                wait = 0;
            } else {
                wait += 1;
                stop = wait >= cfg.patience;
            }
        }
        if stop {
            break;
        }

        let grads = bound.grads(&tape.backward(loss)?);
        adam_step(&mut model.params_mut(), &grads, &mut adam, lr)?;
    }

    if !val_nodes.is_empty() {
        let micro = score(&model.logits(graph)?, &val_nodes, &val_y, c)?.micro;
        if best.as_ref().is_none_or(|(b, _)| micro > *b) {
            report.best_epoch = Some(report.losses.len());
            report.best_val = Some(micro);
            best = Some((micro, model.clone()));
        }
    }
    Ok(match best {
        Some((_, m)) => (m, report),
        None => (model, report),
    })
}

/// Argmax class per node.
pub fn predict<F: Scalar>(model: &TGCNModel<F>, graph: &DynamicGraph<F>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(graph)?))
}

/// Scores the labelled nodes among `mask`.
pub fn evaluate<F: Scalar>(model: &TGCNModel<F>, graph: &DynamicGraph<F>, mask: &[usize]) -> Result<F1Scores> {
    let (nodes, truth) = labeled(graph, mask);
    if nodes.is_empty() {
        return Err(Error::EmptySet("evaluation mask has no labelled nodes".into()));
    }
    if model.feature_dim() != graph.feature_dim() {
        return Err(Error::shape("evaluate", &[model.feature_dim()], &[graph.feature_dim()]));
    }
    score(&model.logits(graph)?, &nodes, &truth, graph.num_classes())
}

/// Class probabilities of the frozen model on recorded inputs. Gradients flow
/// to the inputs and propagators only.
pub fn soft_labels<'t, F: Scalar>(
    model: &TGCNModel<F>,
    propagators: &[Propagator<'t, F>],
    x_seq: Var<'t, F>,
) -> Result<Var<'t, F>> {
    model.bind(x_seq.tape(), false).forward(propagators, x_seq)?.softmax()
}

//! Condensation loop: label assignment, feature initialisation, joint
//! updates of the synthetic features and the spiking generator, and the
//! random coreset baseline.

mod coreset;
mod labels;

pub use coreset::{coreset_random, coreset_random_with_nodes};
pub use labels::{apportion, assign_labels, class_counts, condensed_size};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, unpack, write_checkpoint};
use crate::dgnn::{soft_labels, TGCNModel};
use crate::error::{Error, Result};
use crate::gradflow::{adam_step, AdamState, Tape, Tensor, Var};
use crate::graphstore::{normalize_transition, save_dynamic_graph, CondensedGraph, DynamicGraph, Split};
use crate::matchloss::{dist_loss, logit_loss, total_loss, ClassKernels, ClassPartition, KernelConfig, RealStates};
use crate::scalar::Scalar;
use crate::spikegen::{BoundGenerator, PsiMode, SpikeConfig, SpikingGenerator};
use crate::statefield::{build_field, build_field_tape, transition_from_spikes, FieldConfig, Propagator, StateField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondenseConfig {
    pub ratio: f64,
    pub loops: usize,
    pub lr_features: f64,
    pub lr_generator: f64,
    pub gamma: f64,
    pub field: FieldConfig,
    pub kernel: KernelConfig,
    pub spike: SpikeConfig,
    pub seed: u64,
    /// Real nodes drawn per class per iteration.
    pub sample_cap: usize,
    /// Iterations between checkpoints when an output directory is given.
    pub checkpoint_every: usize,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            ratio: 0.1,
            loops: 600,
            lr_features: 0.05,
            lr_generator: 0.05,
            gamma: 0.1,
            field: FieldConfig::default(),
            kernel: KernelConfig::default(),
            spike: SpikeConfig::default(),
            seed: 0,
            sample_cap: 256,
            checkpoint_every: 100,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!("ratio must lie in (0, 1], got {}", self.ratio)));
        }
        if !(self.lr_features > 0.0 && self.lr_generator > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.sample_cap == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument("sample_cap and checkpoint_every must be positive".into()));
        }
        self.field.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l_dist: f64,
    pub l_logit: f64,
    pub total: f64,
    /// Wall time since the loop started.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CondenseReport {
    pub records: Vec<IterationRecord>,
    pub seconds: f64,
    /// Times the real state field was built during the run.
    pub real_field_builds: usize,
    /// Times the frozen classifier produced soft labels.
    pub soft_label_calls: usize,
}

impl CondenseReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,l_dist,l_logit,total,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.iteration, r.l_dist, r.l_logit, r.total, r.seconds);
        }
        out
    }
}

/// Labelled training nodes and their classes.
pub fn training_nodes<F: Scalar>(g: &DynamicGraph<F>) -> (Vec<usize>, Vec<usize>) {
    g.mask(Split::Train)
        .into_iter()
        .filter_map(|v| g.labels()[v].map(|y| (v, y)))
        .unzip()
}

/// Per-dimension mean and standard deviation over a node set and all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl<F: Scalar> FeatureStats<F> {
    pub fn of_nodes(g: &DynamicGraph<F>, nodes: &[usize]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::NoLabeledNodes);
        }
        let (steps, n, d) = (g.num_steps(), g.num_nodes(), g.feature_dim());
        let x = g.features().data();
        let count = F::from_count(steps * nodes.len());
        let mut mean = vec![F::zero(); d];
        for t in 0..steps {
            for &v in nodes {
                for j in 0..d {
                    mean[j] = mean[j] + x[(t * n + v) * d + j];
                }
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);
        let mut var = vec![F::zero(); d];
        for t in 0..steps {
            for &v in nodes {
                for j in 0..d {
                    let e = x[(t * n + v) * d + j] - mean[j];
                    var[j] = var[j] + e * e;
                }
            }
        }
        let floor = F::lit(STD_FLOOR);
        let std = var.into_iter().map(|s| (s / count).sqrt().max(floor)).collect();
        Ok(Self { mean, std })
    }
}

/// `[T, m, d]` Gaussian features matched to `stats` per dimension.
pub fn init_features<F: Scalar>(m: usize, steps: usize, d: usize, seed: u64, stats: &FeatureStats<F>) -> Result<Tensor<F>> {
    if m == 0 || steps == 0 || d == 0 {
        return Err(Error::InvalidArgument("feature dimensions must be positive".into()));
    }
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(Error::shape("init_features", &[d], &[stats.mean.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(&[steps, m, d], |i| {
        let j = i % d;
        let z: f64 = StandardNormal.sample(&mut rng);
        stats.mean[j] + stats.std[j] * F::lit(z)
    }))
}

/// Builds the real field lazily and counts how often that happens.
#[derive(Debug)]
pub struct RealFieldCache<'g, F> {
    graph: &'g DynamicGraph<F>,
    cfg: FieldConfig,
    field: Option<StateField<F>>,
    builds: usize,
}

impl<'g, F: Scalar> RealFieldCache<'g, F> {
    pub fn new(graph: &'g DynamicGraph<F>, cfg: FieldConfig) -> Self {
        Self {
            graph,
            cfg,
            field: None,
            builds: 0,
        }
    }

    pub fn get(&mut self) -> Result<&StateField<F>> {
        if self.field.is_none() {
            self.field = Some(build_field(&self.graph.transitions(), self.graph.features(), &self.cfg)?);
            self.builds += 1;
        }
        Ok(self.field.as_ref().expect("just built"))
    }

    pub fn builds(&self) -> usize {
        self.builds
    }
}

fn condensed_states<F: Scalar>(
    gen: &SpikingGenerator<F>,
    x: &Tensor<F>,
    cfg: &FieldConfig,
) -> Result<Tensor<F>> {
    let snaps = gen.realize(x)?;
    let transitions: Vec<_> = snaps.iter().map(normalize_transition).collect();
    let field = build_field(&transitions, x, cfg)?;
    let m = x.shape()[1];
    field.node_matrix(&(0..m).collect::<Vec<_>>())
}

/// Recorded loss components of one iteration.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'t, F> {
    pub l_dist: Var<'t, F>,
    pub l_logit: Var<'t, F>,
    pub total: Var<'t, F>,
}

/// The condensation objective `L_dist + γ L_logit` with everything that stays
/// fixed across iterations: class partition, cached real states, frozen
/// bandwidths, condensed labels and the pretrained model.
#[derive(Debug)]
pub struct Objective<'m, F> {
    partition: ClassPartition<F>,
    real_states: RealStates<F>,
    kernels: ClassKernels<F>,
    labels: Vec<usize>,
    field: FieldConfig,
    gamma: F,
    model: Option<&'m TGCNModel<F>>,
    rng: ChaCha8Rng,
    real_field_builds: usize,
    soft_label_calls: usize,
}

impl<'m, F: Scalar> Objective<'m, F> {
    /// Builds the real field once and freezes the kernel bandwidths against
    /// the condensed states of (`x_init`, `generator`).
    pub fn new(
        real: &DynamicGraph<F>,
        cfg: &CondenseConfig,
        pretrained: Option<&'m TGCNModel<F>>,
        labels: Vec<usize>,
        x_init: &Tensor<F>,
        generator: &SpikingGenerator<F>,
    ) -> Result<Self> {
        cfg.validate()?;
        let use_logit = cfg.gamma > 0.0;
        if use_logit {
            let model = pretrained
                .ok_or_else(|| Error::InvalidArgument("gamma > 0 requires a pretrained model".into()))?;
            if model.feature_dim() != real.feature_dim() || model.num_classes() != real.num_classes() {
                return Err(Error::InvalidArgument(format!(
                    "pretrained model (d={}, C={}) does not match the graph (d={}, C={})",
                    model.feature_dim(),
                    model.num_classes(),
                    real.feature_dim(),
                    real.num_classes()
                )));
            }
        }
        let (nodes, real_labels) = training_nodes(real);
        let c = real.num_classes();
        let pairs: Vec<(usize, usize)> = nodes.into_iter().zip(real_labels).collect();
        let partition = ClassPartition::<F>::new(&pairs, &labels, c)?;
        let mut cache = RealFieldCache::new(real, cfg.field);
        let real_field = cache.get()?;
        let class_states = (0..c)
            .map(|k| {
                let rows = &partition.real[k];
                if rows.is_empty() {
                    Ok(None)
                } else {
                    real_field.node_matrix(rows).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let real_states = RealStates::new(class_states, cfg.sample_cap)?;
        let kernels = ClassKernels::resolve(
            &cfg.kernel,
            &real_states,
            &condensed_states(generator, x_init, &cfg.field)?,
            &partition,
        )?;
        Ok(Self {
            partition,
            real_states,
            kernels,
            labels,
            field: cfg.field,
            gamma: F::lit(cfg.gamma),
            model: if use_logit { pretrained } else { None },
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe),
            real_field_builds: cache.builds(),
            soft_label_calls: 0,
        })
    }

    pub fn partition(&self) -> &ClassPartition<F> {
        &self.partition
    }

    pub fn kernels(&self) -> &ClassKernels<F> {
        &self.kernels
    }

    pub fn real_field_builds(&self) -> usize {
        self.real_field_builds
    }

    pub fn soft_label_calls(&self) -> usize {
        self.soft_label_calls
    }

    /// Records the objective for features `x` (`[T, m, d]`) and a bound generator.
    pub fn terms<'t>(&mut self, x: Var<'t, F>, generator: &BoundGenerator<'t, F>) -> Result<LossTerms<'t, F>> {
        let props: Vec<Propagator<F>> = generator
            .generate(x)?
            .into_iter()
            .map(|s| transition_from_spikes(s).map(Propagator::Dense))
            .collect::<Result<_>>()?;
        let field = build_field_tape(&props, x, &self.field)?;
        let l_dist = dist_loss(
            &mut self.real_states,
            field.node_matrix()?,
            &self.partition,
            &self.kernels,
            &mut self.rng,
        )?;
        let l_logit = match self.model {
            Some(model) => {
                self.soft_label_calls += 1;
                logit_loss(soft_labels(model, &props, x)?, &self.labels)?
            }
            None => x.tape().scalar(F::zero()),
        };
        let total = total_loss(l_dist, l_logit, self.gamma)?;
        Ok(LossTerms { l_dist, l_logit, total })
    }
}

/// Runs the condensation loop. `pretrained` is required when `gamma > 0`.
/// With `out_dir` the current state is written every `checkpoint_every`
/// iterations and at exit.
pub fn condense<F: Scalar>(
    real: &DynamicGraph<F>,
    cfg: &CondenseConfig,
    pretrained: Option<&TGCNModel<F>>,
    out_dir: Option<&Path>,
) -> Result<(CondensedGraph<F>, SpikingGenerator<F>, CondenseReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let (nodes, labels) = training_nodes(real);
    let c = real.num_classes();
    let cond_labels = assign_labels(&labels, c, cfg.ratio)?;
    let m = cond_labels.len();
    let stats = FeatureStats::of_nodes(real, &nodes)?;
    let mut x_tilde = init_features(m, real.num_steps(), real.feature_dim(), cfg.seed, &stats)?;
    let mut generator = SpikingGenerator::initialize(&x_tilde, &cfg.spike)?;
    let mut objective = Objective::new(real, cfg, pretrained, cond_labels.clone(), &x_tilde, &generator)?;

    let mut adam_x = AdamState::default();
    let mut adam_g = AdamState::default();
    let (lr_x, lr_g) = (F::lit(cfg.lr_features), F::lit(cfg.lr_generator));
    let mut report = CondenseReport::default();

    for iteration in 0..cfg.loops {
        let tape = Tape::new();
        let x = tape.param(x_tilde.clone());
        let bound = generator.bind(&tape);
        let terms = objective.terms(x, &bound)?;
        let record = IterationRecord {
            iteration,
            l_dist: terms.l_dist.item()?.as_f64(),
            l_logit: terms.l_logit.item()?.as_f64(),
            total: terms.total.item()?.as_f64(),
            seconds: start.elapsed().as_secs_f64(),
        };
        if !record.total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: record.total,
            });
        }
        report.records.push(record);

        let grads = tape.backward(terms.total)?;
        let gx = grads.wrt(x);
        let gg = bound.grads(&grads);
        if !gx.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: f64::NAN,
            });
        }
        let mut gen_grads = vec![gg.tau_raw, gg.u_th_raw];
        gen_grads.extend(gg.psi_weight);
        adam_step(&mut [&mut x_tilde], &[gx], &mut adam_x, lr_x)?;
        adam_step(&mut generator.params_mut(), &gen_grads, &mut adam_g, lr_g)?;

        if let Some(dir) = out_dir {
            if (iteration + 1) % cfg.checkpoint_every == 0 {
                report.real_field_builds = objective.real_field_builds();
                report.soft_label_calls = objective.soft_label_calls();
                report.seconds = start.elapsed().as_secs_f64();
                let snaps = generator.realize(&x_tilde)?;
                let g = CondensedGraph::new(c, x_tilde.clone(), cond_labels.clone(), snaps)?;
                write_outputs(dir, &g, &generator, &report)?;
            }
        }
    }

    let snaps = generator.realize(&x_tilde)?;
    let condensed = CondensedGraph::new(c, x_tilde, cond_labels, snaps)?;
    report.real_field_builds = objective.real_field_builds();
    report.soft_label_calls = objective.soft_label_calls();
    report.seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        write_outputs(dir, &condensed, &generator, &report)?;
    }
    Ok((condensed, generator, report))
}

/// Dataset directory plus `generator_params.bin` and `report.csv`.
pub fn write_outputs<F: Scalar>(
    dir: &Path,
    graph: &CondensedGraph<F>,
    generator: &SpikingGenerator<F>,
    report: &CondenseReport,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_dynamic_graph(&graph.to_dynamic_graph(), dir)?;
    save_generator(generator, &dir.join("generator_params.bin"))?;
    let csv = dir.join("report.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorHeader {
    kind: String,
    feature_dim: usize,
    threshold_shape: Vec<usize>,
    psi_mode: PsiMode,
    beta: f64,
    u_reset: f64,
}

pub fn save_generator<F: Scalar>(gen: &SpikingGenerator<F>, path: &Path) -> Result<()> {
    let header = GeneratorHeader {
        kind: "spiking_generator".into(),
        feature_dim: gen.feature_dim(),
        threshold_shape: gen.u_th_raw.shape().to_vec(),
        psi_mode: gen.psi_mode,
        beta: gen.beta.as_f64(),
        u_reset: gen.u_reset.as_f64(),
    };
    write_checkpoint(path, &header, &gen.params())
}

pub fn load_generator<F: Scalar>(path: &Path) -> Result<SpikingGenerator<F>> {
    let (h, values): (GeneratorHeader, _) = read_checkpoint(path)?;
    if h.kind != "spiking_generator" {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            msg: format!("unexpected checkpoint kind {:?}", h.kind),
        });
    }
    let cfg = SpikeConfig {
        beta: h.beta,
        u_reset: h.u_reset,
        psi_mode: h.psi_mode,
        per_step_threshold: !h.threshold_shape.is_empty(),
        ..Default::default()
    };
    let mut gen = SpikingGenerator::new(h.feature_dim, F::zero(), F::zero(), &cfg)?;
    if !h.threshold_shape.is_empty() {
        gen.u_th_raw = Tensor::zeros(&h.threshold_shape);
    }
    let shapes: Vec<Vec<usize>> = gen.params().iter().map(|p| p.shape().to_vec()).collect();
    for (p, t) in gen.params_mut().into_iter().zip(unpack(path, &values, &shapes)?) {
        *p = t;
    }
    Ok(gen)
}

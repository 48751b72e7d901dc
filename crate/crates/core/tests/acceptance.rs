//! Acceptance suite: one line per criterion, nonzero exit when any fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use dygc::analysis::{jaccard_continuity, kl_joint, kl_marginal_sum, DiscreteDynamicDistribution, Divergence};
use dygc::condense::{
    assign_labels, condense, coreset_random, save_generator, load_generator, CondenseConfig, Objective,
};
use dygc::dgnn::{evaluate, train, TGCNModel, TrainConfig};
use dygc::gradflow::{concat, SpikeMode, Tape, Tensor};
use dygc::graphstore::{
    generate_synthetic, load_dynamic_graph, normalize_transition, save_dynamic_graph, Adjacency, DynamicGraph, Split,
    SyntheticParams,
};
use dygc::matchloss::{dist_loss, ClassKernels, ClassPartition, Kernel, RealStates};
use dygc::spikegen::{PsiMode, SpikeConfig, SpikingGenerator};
use dygc::statefield::{build_field, FieldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_simplex(rng: &mut ChaCha8Rng, s: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..s).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Product of independent per-step marginals, renormalised against rounding.
fn product(marginals: &[Vec<f64>]) -> DiscreteDynamicDistribution {
    let s = marginals[0].len();
    let t = marginals.len();
    let size = s.pow(t as u32);
    let mut probs: Vec<f64> = (0..size)
        .map(|mut i| {
            let mut p = 1.0;
            for step in (0..t).rev() {
                p *= marginals[step][i % s];
                i /= s;
            }
            p
        })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    DiscreteDynamicDistribution::new(s, t, probs).unwrap()
}

fn criterion_1() -> Outcome {
    let p = DiscreteDynamicDistribution::new(2, 2, vec![0.25; 4]).unwrap();
    let q = DiscreteDynamicDistribution::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    let joint = kl_joint(&p, &q).unwrap();
    let marg = kl_marginal_sum(&p, &q).unwrap();
    let mut ok = joint == Divergence::Infinite && marg == Divergence::Finite(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = rng.random_range(2..=4);
        let t = rng.random_range(2..=3);
        let pm: Vec<Vec<f64>> = (0..t).map(|_| random_simplex(&mut rng, s)).collect();
        let qm: Vec<Vec<f64>> = (0..t).map(|_| random_simplex(&mut rng, s)).collect();
        let (p, q) = (product(&pm), product(&qm));
        let j = kl_joint(&p, &q).unwrap().finite().unwrap();
        let m = kl_marginal_sum(&p, &q).unwrap().finite().unwrap();
        worst = worst.max((j - m).abs());
    }
    ok &= worst < 1e-10;
    outcome(ok, format!("joint={joint} marginal={marg}; max |joint - marginal| on 100 products = {worst:.2e}"))
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Adjacency {
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                pairs.push((u, v));
            }
        }
    }
    Adjacency::from_edges(n, pairs).unwrap()
}

/// Dense `D^{-1/2}(A + I)D^{-1/2}` built entry by entry.
fn reference_transition(a: &Adjacency) -> Vec<Vec<f64>> {
    let n = a.num_nodes();
    let mut m = vec![vec![0.0; n]; n];
    for (u, row) in m.iter_mut().enumerate() {
        for (v, x) in row.iter_mut().enumerate() {
            if u == v || a.contains(u, v) {
                *x = 1.0;
            }
        }
    }
    let deg: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    for u in 0..n {
        for v in 0..n {
            m[u][v] /= (deg[u] * deg[v]).sqrt();
        }
    }
    m
}

/// Field `[t][k][v][j]` by direct loops over the recurrence.
fn reference_field(ms: &[Vec<Vec<f64>>], x: &[Vec<Vec<f64>>], k_max: usize, alpha: f64) -> Vec<Vec<Vec<Vec<f64>>>> {
    let (steps, n, d) = (x.len(), x[0].len(), x[0][0].len());
    let mut h = vec![vec![vec![vec![0.0; d]; n]; k_max]; steps];
    for t in 0..steps {
        for k in 0..k_max {
            for v in 0..n {
                for j in 0..d {
                    let spatial = |h: &Vec<Vec<Vec<Vec<f64>>>>| -> f64 {
                        (0..n).map(|u| ms[t][v][u] * h[t][k - 1][u][j]).sum()
                    };
                    h[t][k][v][j] = match (t, k) {
                        (0, 0) => x[0][v][j],
                        (0, _) => spatial(&h),
                        (_, 0) => (1.0 - alpha) * x[t][v][j] + alpha * x[t - 1][v][j],
                        _ => alpha * h[t - 1][k][v][j] + (1.0 - alpha) * spatial(&h),
                    };
                }
            }
        }
    }
    h
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let steps = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=3);
        let alpha = rng.random_range(0.0..1.0);
        let snaps: Vec<Adjacency> = (0..steps).map(|_| random_adjacency(&mut rng, n, 0.5)).collect();
        let xs: Vec<Vec<Vec<f64>>> = (0..steps)
            .map(|_| (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let flat = Tensor::new(&[steps, n, d], xs.iter().flatten().flatten().copied().collect()).unwrap();
        let trans: Vec<_> = snaps.iter().map(normalize_transition).collect();
        let field = build_field(&trans, &flat, &FieldConfig { k, alpha }).unwrap();
        let ms: Vec<_> = snaps.iter().map(reference_transition).collect();
        let reference = reference_field(&ms, &xs, k, alpha);
        for t in 0..steps {
            for kk in 0..k {
                let cell = field.cell(t, kk);
                for v in 0..n {
                    for j in 0..d {
                        worst = worst.max((cell[v * d + j] - reference[t][kk][v][j]).abs());
                    }
                }
            }
        }
    }

    // closed forms: α = 0 gives M_t^k X_t, T = 1 gives M_0^k X_0
    let mut exact = true;
    for (steps, alpha) in [(3usize, 0.0f64), (1, 0.7)] {
        let n = 5;
        let d = 2;
        let snaps: Vec<Adjacency> = (0..steps).map(|_| random_adjacency(&mut rng, n, 0.5)).collect();
        let x = Tensor::from_fn(&[steps, n, d], |_| rng.random_range(-1.0..1.0));
        let trans: Vec<_> = snaps.iter().map(normalize_transition::<f64>).collect();
        let field = build_field(&trans, &x, &FieldConfig { k: 3, alpha }).unwrap();
        for (t, m) in trans.iter().enumerate() {
            let mut h = x.outer(t).unwrap().into_data();
            for kk in 0..3 {
                exact &= field.cell(t, kk) == h.as_slice();
                h = m.csr().mul_dense(&h, d).unwrap();
            }
        }
    }
    outcome(
        worst < 1e-10 && exact,
        format!("max abs diff vs loop reference on 50 instances = {worst:.2e}; closed forms exact = {exact}"),
    )
}

fn small_real_graph() -> DynamicGraph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, steps, d) = (6, 2, 3);
    let snaps = (0..steps).map(|_| random_adjacency(&mut rng, n, 0.5)).collect();
    let x = Tensor::from_fn(&[steps, n, d], |i| {
        let v = (i / d) % n;
        let shift = if v < 3 { 0.5 } else { -0.5 };
        shift + rng.random_range(-1.0..1.0)
    });
    let labels = (0..n).map(|v| Some(usize::from(v >= 3))).collect();
    DynamicGraph::new(2, snaps, x, labels, vec![Split::Train; n]).unwrap()
}

fn criterion_3() -> Outcome {
    let real = small_real_graph();
    let model = TGCNModel::<f64>::new(3, 4, 2, 2, 5).unwrap();
    let cfg = CondenseConfig {
        ratio: 0.5,
        gamma: 0.1,
        ..Default::default()
    };
    let labels = assign_labels(&[0, 0, 0, 1, 1, 1], 2, cfg.ratio).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = Tensor::from_fn(&[2, labels.len(), 3], |_| rng.random_range(-1.0..1.0));
    let spike = SpikeConfig {
        beta: 2.0,
        ..Default::default()
    };
    let gen0 = SpikingGenerator::new(3, 0.3, 0.2, &spike).unwrap().with_spike_mode(SpikeMode::Relaxed);

    let eval = |x: &Tensor<f64>, gen: &SpikingGenerator<f64>| -> (f64, Tensor<f64>, f64, f64) {
        let mut obj = Objective::new(&real, &cfg, Some(&model), labels.clone(), &x0, &gen0).unwrap();
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let bound = gen.bind(&tape);
        let terms = obj.terms(xv, &bound).unwrap();
        let value = terms.total.item().unwrap();
        let grads = tape.backward(terms.total).unwrap();
        let g = bound.grads(&grads);
        (value, grads.wrt(xv), g.tau_raw.item().unwrap(), g.u_th_raw.item().unwrap())
    };
    let (_, gx, gtau, gth) = eval(&x0, &gen0);
    let h = 1e-6;
    let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * h);
    let mut num_x = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let mut a = x0.clone();
        a.data_mut()[i] += h;
        let mut b = x0.clone();
        b.data_mut()[i] -= h;
        num_x.push(central(eval(&a, &gen0).0, eval(&b, &gen0).0));
    }
    let perturb = |f: &dyn Fn(&mut SpikingGenerator<f64>, f64)| {
        let mut a = gen0.clone();
        f(&mut a, h);
        let mut b = gen0.clone();
        f(&mut b, -h);
        central(eval(&x0, &a).0, eval(&x0, &b).0)
    };
    let num_tau = perturb(&|g, e| g.tau_raw.data_mut()[0] += e);
    let num_th = perturb(&|g, e| g.u_th_raw.data_mut()[0] += e);

    let scale = num_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err_x = gx.data().iter().zip(&num_x).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale;
    let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(1e-8);
    let (err_tau, err_th) = (rel(gtau, num_tau), rel(gth, num_th));
    let worst = err_x.max(err_tau).max(err_th);
    outcome(
        worst < 1e-4 && scale > 0.0 && num_tau != 0.0 && num_th != 0.0,
        format!("relative error: features {err_x:.2e}, tau_raw {err_tau:.2e}, u_th_raw {err_th:.2e}"),
    )
}

fn mmd(real: Vec<Tensor<f64>>, cond: Tensor<f64>, cond_labels: &[usize], sigma: f64) -> f64 {
    let c = real.len();
    let pairs: Vec<(usize, usize)> = real
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.shape()[0]).map(move |i| (1000 * k + i, k)))
        .collect();
    let part = ClassPartition::new(&pairs, cond_labels, c).unwrap();
    let mut states = RealStates::new(real.into_iter().map(Some).collect(), 256).unwrap();
    let kernels = ClassKernels {
        kernels: vec![Some(Kernel::rbf(sigma).unwrap()); c],
    };
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    dist_loss(&mut states, tape.constant(cond), &part, &kernels, &mut rng).unwrap().item().unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 6;
    let rand_matrix = |rng: &mut ChaCha8Rng, rows: usize| Tensor::from_fn(&[rows, dim], |_| rng.random_range(-2.0..2.0));

    let real = vec![rand_matrix(&mut rng, 4), rand_matrix(&mut rng, 3)];
    let cond = Tensor::new(&[7, dim], [real[0].data(), real[1].data()].concat()).unwrap();
    let replicate = mmd(real.clone(), cond, &[0, 0, 0, 0, 1, 1, 1], 1.3).abs();

    let mut min_loss = f64::INFINITY;
    for _ in 0..200 {
        let c = rng.random_range(1..=3);
        let real: Vec<_> = (0..c).map(|_| {
            let rows = rng.random_range(1..=6);
            rand_matrix(&mut rng, rows)
        }).collect();
        let labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, 1 + k % 2)).collect();
        let cond = rand_matrix(&mut rng, labels.len());
        let sigma = rng.random_range(0.2..3.0);
        min_loss = min_loss.min(mmd(real, cond, &labels, sigma));
    }

    let real = vec![rand_matrix(&mut rng, 5), rand_matrix(&mut rng, 4)];
    let single = rand_matrix(&mut rng, 3);
    let base = mmd(real.clone(), single.clone(), &[0, 0, 1], 1.0);
    let tape = Tape::new();
    let s = tape.constant(single);
    let doubled = concat(&[s, s], 0).unwrap().value();
    let dup = mmd(real, doubled, &[0, 0, 1, 0, 0, 1], 1.0);
    let dup_err = (dup - base).abs();
    outcome(
        replicate < 1e-10 && min_loss >= -1e-10 && dup_err < 1e-12,
        format!("replicated = {replicate:.2e}; min over 200 random = {min_loss:.3e}; duplication |diff| = {dup_err:.2e}"),
    )
}

fn spikes_well_formed(s: &Tensor<f64>) -> bool {
    let m = s.shape()[0];
    (0..m).all(|i| {
        s.at2(i, i) == 0.0 && (0..m).all(|j| (s.at2(i, j) == 0.0 || s.at2(i, j) == 1.0) && s.at2(i, j) == s.at2(j, i))
    })
}

fn criterion_5() -> Outcome {
    // τ = 0.5, Ψ = 1: voltages 0.5 → fire, 0.625 → silent, 0.8125 → fire
    let cfg = SpikeConfig {
        per_step_threshold: true,
        ..Default::default()
    };
    let mut gen = SpikingGenerator::<f64>::new(1, 0.0, 0.0, &cfg).unwrap();
    gen.u_th_raw = Tensor::new(&[3], vec![0.5, 0.7, 0.8]).unwrap();
    let x = Tensor::full(&[3, 2, 1], 1.0);
    let snaps = gen.realize(&x).unwrap();
    let pattern: Vec<bool> = snaps.iter().map(|a| a.contains(0, 1)).collect();
    let tape = Tape::new();
    let b = gen.bind(&tape);
    let u0 = b.initial_state(2).unwrap();
    let psi = b.synaptic_input(tape.constant(x.outer(0).unwrap())).unwrap();
    let mut u = u0;
    let mut voltages = Vec::new();
    for step in 0..3 {
        let u_hat = b.integrate(u, psi).unwrap();
        voltages.push(u_hat.value().at2(0, 1));
        let spikes = b.fire(u_hat, step).unwrap();
        u = b.soft_reset(u_hat, spikes).unwrap();
    }
    let exact = pattern == [true, false, true] && voltages == [0.5, 0.625, 0.8125];

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut formed = true;
    for _ in 0..100 {
        let m = rng.random_range(1..=7);
        let steps = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let cfg = SpikeConfig {
            beta: rng.random_range(0.5..8.0),
            u_reset: rng.random_range(-0.5..0.5),
            psi_mode: if rng.random_bool(0.5) { PsiMode::Dot } else { PsiMode::Bilinear },
            per_step_threshold: rng.random_bool(0.5),
            init_fire_rate: 0.1,
        };
        let x = Tensor::from_fn(&[steps, m, d], |_| rng.random_range(-1.5..1.5));
        let mut gen = SpikingGenerator::<f64>::new(d, rng.random_range(-3.0..3.0), 0.0, &cfg).unwrap();
        gen.u_th_raw = if cfg.per_step_threshold {
            Tensor::from_fn(&[steps], |_| rng.random_range(-0.5..0.5))
        } else {
            Tensor::scalar(rng.random_range(-0.5..0.5))
        };
        if let Some(w) = gen.psi_weight.as_mut() {
            *w = Tensor::from_fn(&[d, d], |_| rng.random_range(-1.0..1.0));
        }
        let tape = Tape::new();
        let spikes = gen.bind(&tape).generate(tape.constant(x)).unwrap();
        formed &= spikes.iter().all(|s| spikes_well_formed(&s.value()));
    }
    outcome(
        exact && formed,
        format!("pattern {pattern:?} voltages {voltages:?} (per-step thresholds 0.5/0.7/0.8); 100 random generators well-formed = {formed}"),
    )
}

fn benchmark_graph() -> DynamicGraph<f64> {
    generate_synthetic(&SyntheticParams {
        num_nodes: 300,
        num_steps: 6,
        num_classes: 3,
        feature_dim: 16,
        class_separation: 0.05,
        seed: 0,
        ..Default::default()
    })
    .unwrap()
}

fn benchmark_config(seed: u64) -> CondenseConfig {
    CondenseConfig {
        ratio: 0.1,
        loops: 300,
        seed,
        ..Default::default()
    }
}

struct BenchmarkRun {
    descent: Outcome,
    quality: Outcome,
    condensed_snapshots: Vec<Adjacency>,
    condensed_features: Tensor<f64>,
    generator: SpikingGenerator<f64>,
}

fn criteria_6_7() -> BenchmarkRun {
    let start = Instant::now();
    let real = benchmark_graph();
    let test = real.mask(Split::Test);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (mut whole, mut dygc, mut random) = (vec![], vec![], vec![]);
    let mut descent = None;
    let mut first = None;
    for seed in 0..5u64 {
        let tc = TrainConfig { seed, ..Default::default() };
        let pretrained = train(&real, &tc).unwrap();
        whole.push(evaluate(&pretrained, &real, &test).unwrap().micro);
        let cfg = benchmark_config(seed);
        let t0 = Instant::now();
        let (cg, gen, report) = pool.install(|| condense(&real, &cfg, Some(&pretrained), None)).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        if seed == 0 {
            let initial = report.records[0].total;
            let last = report.records.last().unwrap().total;
            descent = Some(outcome(
                last < 0.5 * initial && secs < 120.0,
                format!("total loss {initial:.4} -> {last:.4} (ratio {:.4}) in {secs:.1}s single-threaded", last / initial),
            ));
            first = Some((cg.adjacency.clone(), cg.features.clone(), gen));
        }
        let m = cg.num_nodes();
        dygc.push(evaluate(&train(&cg.to_dynamic_graph(), &tc).unwrap(), &real, &test).unwrap().micro);
        let cs = coreset_random(&real, cfg.ratio, seed).unwrap();
        assert_eq!(cs.num_nodes(), m);
        random.push(evaluate(&train(&cs.to_dynamic_graph(), &tc).unwrap(), &real, &test).unwrap().micro);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (w, d, r) = (mean(&whole), mean(&dygc), mean(&random));
    let fidelity = d / w;
    let secs = start.elapsed().as_secs_f64();
    let quality = outcome(
        d - r >= 0.02 && fidelity >= 0.8 && secs < 600.0,
        format!(
            "test Micro-F1 over 5 seeds: condensed {d:.4}, random coreset {r:.4} (gap {:+.2} points), whole {w:.4}, fidelity {:.1}% in {secs:.0}s",
            100.0 * (d - r),
            100.0 * fidelity
        ),
    );
    let (condensed_snapshots, condensed_features, generator) = first.unwrap();
    BenchmarkRun {
        descent: descent.unwrap(),
        quality,
        condensed_snapshots,
        condensed_features,
        generator,
    }
}

fn criterion_8(run: &BenchmarkRun) -> Outcome {
    let start = Instant::now();
    let j = jaccard_continuity(&run.condensed_snapshots);
    let mean = j.iter().sum::<f64>() / j.len() as f64;
    let mut frozen = run.generator.clone();
    frozen.tau_raw = Tensor::scalar(40.0);
    let [steps, m, d] = run.condensed_features.shape()[..] else { unreachable!() };
    let x0 = run.condensed_features.outer(0).unwrap();
    let constant = Tensor::from_fn(&[steps, m, d], |i| x0.data()[i % (m * d)]);
    let ablation = jaccard_continuity(&frozen.realize(&constant).unwrap());
    let frozen_ok = ablation.iter().all(|&v| v == 1.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mean < 1.0 && frozen_ok && secs < 60.0,
        format!("condensed mean Jaccard {mean:.4} {j:.3?}; frozen ablation {ablation:?}"),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn strip_seconds(csv: &[u8]) -> String {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let real = benchmark_graph();
    let data = tmp.path().join("real");
    save_dynamic_graph(&real, &data).unwrap();
    let loaded: DynamicGraph<f64> = load_dynamic_graph(&data).unwrap();
    let graph_roundtrip = loaded == real;

    let pretrained = train(&loaded, &TrainConfig { epochs: 20, patience: 20, ..Default::default() }).unwrap();
    let ckpt = tmp.path().join("model.bin");
    pretrained.save(&ckpt).unwrap();
    let model_roundtrip = TGCNModel::<f64>::load(&ckpt).unwrap() == pretrained;

    let cfg = CondenseConfig { loops: 30, checkpoint_every: 10, ..benchmark_config(7) };
    let run = |name: &str| {
        let g: DynamicGraph<f64> = load_dynamic_graph(&data).unwrap();
        let model = TGCNModel::<f64>::load(&ckpt).unwrap();
        let out = tmp.path().join(name);
        condense(&g, &cfg, Some(&model), Some(&out)).unwrap();
        dir_bytes(&out)
    };
    let (a, b) = (run("a"), run("b"));
    let same_files = a.len() == b.len()
        && a.iter().zip(&b).all(|((na, ba), (nb, bb))| {
            na == nb && if na == "report.csv" { strip_seconds(ba) == strip_seconds(bb) } else { ba == bb }
        });

    let gen_path = tmp.path().join("a").join("generator_params.bin");
    let gen: SpikingGenerator<f64> = load_generator(&gen_path).unwrap();
    let again = tmp.path().join("gen2.bin");
    save_generator(&gen, &again).unwrap();
    let gen_roundtrip = fs::read(&gen_path).unwrap() == fs::read(&again).unwrap();
    let cond: DynamicGraph<f64> = load_dynamic_graph(&tmp.path().join("a")).unwrap();
    let resaved = tmp.path().join("resaved");
    save_dynamic_graph(&cond, &resaved).unwrap();
    let cond_roundtrip = dir_bytes(&resaved)
        .iter()
        .all(|(n, bytes)| fs::read(tmp.path().join("a").join(n)).unwrap() == *bytes);

    outcome(
        graph_roundtrip && model_roundtrip && same_files && gen_roundtrip && cond_roundtrip,
        format!(
            "identical runs byte-identical = {same_files}; round trips: dataset {graph_roundtrip}, model {model_roundtrip}, generator {gen_roundtrip}, condensed dataset {cond_roundtrip}"
        ),
    )
}

fn timed(limit: Option<f64>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let secs = start.elapsed().as_secs_f64();
    if let Some(limit) = limit {
        o.pass &= secs < limit;
        o.detail = format!("{} [{secs:.2}s, limit {limit}s]", o.detail);
    }
    o
}

fn main() {
    let mut results = vec![
        ("1 divergence decomposition", timed(Some(1.0), criterion_1)),
        ("2 state-field oracle", timed(Some(5.0), criterion_2)),
        ("3 gradient integrity", timed(Some(10.0), criterion_3)),
        ("4 MMD sanity", timed(None, criterion_4)),
        ("5 LIF behaviour", timed(None, criterion_5)),
    ];
    let bench = criteria_6_7();
    let c8 = criterion_8(&bench);
    results.push(("6 condensation descent", bench.descent));
    results.push(("7 downstream quality", bench.quality));
    results.push(("8 continuity diagnostic", c8));
    results.push(("9 determinism and round trips", timed(None, criterion_9)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

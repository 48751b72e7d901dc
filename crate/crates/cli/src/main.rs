mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dygc::analysis::{jaccard_continuity, storage_size};
use dygc::condense::{condense, coreset_random, CondenseReport};
use dygc::dgnn::{evaluate, train_with_report, TrainConfig};
use dygc::graphstore::{generate_synthetic, load_dynamic_graph, save_dynamic_graph, Split};
use dygc::{Graph, Model};
use serde::Serialize;
use serde_json::{json, Value};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dygc", version, about = "Dynamic graph condensation toolkit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dynamic graph.
    Gen(GenArgs),
    /// Train the reference T-GCN on a dataset.
    Pretrain(PretrainArgs),
    /// Condense a dataset (or draw the random coreset baseline).
    Condense(CondenseArgs),
    /// Train on a condensed graph and score on the real test mask.
    Eval(EvalArgs),
    /// Structure diagnostics and the K sweep.
    Inspect(InspectArgs),
}

#[derive(clap::Args, Debug)]
struct GenArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_parser = parse_probability)]
    block_density: Option<f64>,
    #[arg(long, value_parser = parse_probability)]
    cross_density: Option<f64>,
    #[arg(long, value_parser = parse_probability)]
    drift_rate: Option<f64>,
    #[arg(long)]
    class_separation: Option<f64>,
    #[arg(long)]
    feature_noise: Option<f64>,
    #[arg(long)]
    mean_drift: Option<f64>,
}

#[derive(clap::Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct PretrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Dygc,
    Random,
}

#[derive(clap::Args, Debug)]
struct CondenseFlags {
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    loops: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr_features: Option<f64>,
    #[arg(long)]
    lr_generator: Option<f64>,
    /// Pretrained model checkpoint (needed when gamma > 0).
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Run without a pretrained model; requires gamma = 0.
    #[arg(long)]
    no_pretrained: bool,
}

#[derive(clap::Args, Debug)]
struct CondenseArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    flags: CondenseFlags,
    #[arg(long, value_enum, default_value = "dygc")]
    baseline: Baseline,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Real dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Condensed dataset directory.
    #[arg(long)]
    condensed: PathBuf,
    /// Whole-graph model checkpoint for the fidelity reference; trained on
    /// the real graph per repeat when omitted.
    #[arg(long)]
    whole: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(clap::Args, Debug)]
struct InspectArgs {
    /// Dataset directory to inspect.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Two dataset directories reported side by side.
    #[arg(long, num_args = 2, value_names = ["REAL", "CONDENSED"])]
    compare: Option<Vec<PathBuf>>,
    /// Inclusive K range `a..b`: condense and evaluate once per K.
    #[arg(long, value_parser = parse_range)]
    sweep_k: Option<(usize, usize)>,
    #[command(flatten)]
    flags: CondenseFlags,
    #[command(flatten)]
    train: TrainFlags,
}

fn parse_probability(s: &str) -> std::result::Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is not a probability in [0, 1]"))
    }
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let b = b.trim_start_matches('=');
    let (a, b): (usize, usize) = (
        a.parse().map_err(|_| format!("bad range start {a:?}"))?,
        b.parse().map_err(|_| format!("bad range end {b:?}"))?,
    );
    if a == 0 || a > b {
        return Err(format!("range {s:?} must satisfy 1 <= a <= b"));
    }
    Ok((a, b))
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(cli.seed);
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    let output = match &cli.command {
        Command::Gen(a) => cmd_gen(&mut cfg, a)?,
        Command::Pretrain(a) => cmd_pretrain(&mut cfg, a)?,
        Command::Condense(a) => cmd_condense(&mut cfg, a)?,
        Command::Eval(a) => cmd_eval(&mut cfg, a)?,
        Command::Inspect(a) => cmd_inspect(&mut cfg, a)?,
    };
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string_pretty(&output)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DYGC_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DYGC_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value.as_deref().with_context(|| format!("{what} path required (flag or config)"))
}

fn load_graph(path: &Path) -> Result<Graph> {
    load_dynamic_graph(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(cfg: &mut RunConfig, a: &GenArgs) -> Result<Value> {
    let p = &mut cfg.synthetic;
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => { $(if let Some(v) = a.$flag { p.$field = v; })* };
    }
    set!(num_nodes <- n, num_steps <- t, num_classes <- c, feature_dim <- d,
         block_density <- block_density, cross_density <- cross_density, drift_rate <- drift_rate,
         class_separation <- class_separation, feature_noise <- feature_noise, mean_drift <- mean_drift);
    let out = require(&cfg.out, "--out")?;
    let g: Graph = generate_synthetic(&cfg.synthetic)?;
    save_dynamic_graph(&g, out)?;
    Ok(json!({
        "T": g.num_steps(),
        "n": g.num_nodes(),
        "d": g.feature_dim(),
        "C": g.num_classes(),
        "edge_counts": g.snapshots().iter().map(|s| s.num_edges()).collect::<Vec<_>>(),
        "out": out,
    }))
}

fn apply_train(t: &mut TrainConfig, f: &TrainFlags) {
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = f.$field { t.$field = v; })* };
    }
    set!(epochs, hidden, layers, lr, weight_decay, patience);
    if f.epochs.is_some() && f.patience.is_none() {
        t.patience = t.patience.min(t.epochs);
    }
}

fn split_scores(model: &Model, g: &Graph) -> Result<Value> {
    let mut out = serde_json::Map::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let mask = g.mask(split);
        let v = if g.labels().iter().zip(g.splits()).any(|(l, s)| l.is_some() && *s == split) {
            let s = evaluate(model, g, &mask)?;
            json!({"micro_f1": s.micro, "macro_f1": s.macro_})
        } else {
            Value::Null
        };
        out.insert(split.token().into(), v);
    }
    Ok(Value::Object(out))
}

fn cmd_pretrain(cfg: &mut RunConfig, a: &PretrainArgs) -> Result<Value> {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    apply_train(&mut cfg.train, &a.train);
    let g = load_graph(require(&cfg.data, "--data")?)?;
    let out = require(&cfg.out, "--out")?;
    fs::create_dir_all(out)?;
    let (model, report) = train_with_report(&g, &cfg.train)?;
    model.save(&out.join("model.bin"))?;
    let metrics = json!({
        "scores": split_scores(&model, &g)?,
        "best_epoch": report.best_epoch,
        "epochs_run": report.losses.len(),
        "final_loss": report.losses.last(),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn apply_condense(cfg: &mut RunConfig, f: &CondenseFlags) -> Result<Option<Model>> {
    let c = &mut cfg.condense;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = f.$field { c.$field = v; })* };
    }
    set!(ratio, loops, gamma, lr_features, lr_generator);
    if let Some(k) = f.k {
        c.field.k = k;
    }
    if let Some(alpha) = f.alpha {
        c.field.alpha = alpha;
    }
    if f.pretrained.is_some() {
        cfg.pretrained = f.pretrained.clone();
    }
    if f.no_pretrained {
        if cfg.condense.gamma > 0.0 {
            bail!("--no-pretrained requires --gamma 0");
        }
        return Ok(None);
    }
    match (&cfg.pretrained, cfg.condense.gamma > 0.0) {
        (Some(p), true) => Ok(Some(
            Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        )),
        (None, true) => bail!("gamma > 0 needs --pretrained (or --gamma 0 --no-pretrained)"),
        (_, false) => Ok(None),
    }
}

fn report_summary(r: &CondenseReport) -> Value {
    json!({
        "iterations": r.records.len(),
        "initial_total": r.records.first().map(|x| x.total),
        "final_total": r.records.last().map(|x| x.total),
        "seconds": r.seconds,
    })
}

fn cmd_condense(cfg: &mut RunConfig, a: &CondenseArgs) -> Result<Value> {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    let out = require(&cfg.out, "--out")?.to_path_buf();
    let g = load_graph(require(&cfg.data, "--data")?)?;
    match a.baseline {
        Baseline::Random => {
            let c = &mut cfg.condense;
            if let Some(r) = a.flags.ratio {
                c.ratio = r;
            }
            let cs = coreset_random(&g, c.ratio, c.seed)?;
            fs::create_dir_all(&out)?;
            save_dynamic_graph(&cs.to_dynamic_graph(), &out)?;
            Ok(json!({"baseline": "random", "m": cs.num_nodes(), "out": out}))
        }
        Baseline::Dygc => {
            let model = apply_condense(cfg, &a.flags)?;
            let (cg, _, report) = condense(&g, &cfg.condense, model.as_ref(), Some(&out))?;
            Ok(json!({
                "baseline": "dygc",
                "m": cg.num_nodes(),
                "edge_counts": cg.adjacency.iter().map(|s| s.num_edges()).collect::<Vec<_>>(),
                "report": report_summary(&report),
                "out": out,
            }))
        }
    }
}

fn mean_std(xs: &[f64]) -> Value {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    json!({"mean": mean, "std": std})
}

/// Trains on `condensed` once per repeat (seed + i) and scores on the real
/// test mask, with fidelity against whole-graph training.
fn evaluate_condensed(
    real: &Graph,
    condensed: &Graph,
    train: &TrainConfig,
    repeats: usize,
    whole: Option<&Model>,
) -> Result<Value> {
    if repeats == 0 {
        bail!("--repeats must be positive");
    }
    let test = real.mask(Split::Test);
    let (mut micro, mut macro_, mut w_micro, mut w_macro) = (vec![], vec![], vec![], vec![]);
    for i in 0..repeats {
        let tc = TrainConfig {
            seed: train.seed + i as u64,
            ..train.clone()
        };
        let (m, _) = train_with_report(condensed, &tc)?;
        let s = evaluate(&m, real, &test)?;
        micro.push(s.micro);
        macro_.push(s.macro_);
        let w = match whole {
            Some(model) => evaluate(model, real, &test)?,
            None => evaluate(&train_with_report(real, &tc)?.0, real, &test)?,
        };
        w_micro.push(w.micro);
        w_macro.push(w.macro_);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(json!({
        "micro_f1": mean_std(&micro),
        "macro_f1": mean_std(&macro_),
        "whole_micro_f1": mean_std(&w_micro),
        "whole_macro_f1": mean_std(&w_macro),
        "fidelity": {
            "micro": ratio(avg(&micro), avg(&w_micro)),
            "macro": ratio(avg(&macro_), avg(&w_macro)),
        },
        "repeats": repeats,
    }))
}

fn cmd_eval(cfg: &mut RunConfig, a: &EvalArgs) -> Result<Value> {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if let Some(r) = a.repeats {
        cfg.eval.repeats = r;
    }
    apply_train(&mut cfg.train, &a.train);
    let real = load_graph(require(&cfg.data, "--data")?)?;
    let condensed = load_graph(&a.condensed)?;
    let whole = match &a.whole {
        Some(p) => Some(Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let result = evaluate_condensed(&real, &condensed, &cfg.train, cfg.eval.repeats, whole.as_ref())?;
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), &result)?;
    }
    Ok(result)
}

fn diagnostics(path: &Path) -> Result<Value> {
    let g = load_graph(path)?;
    Ok(json!({
        "jaccard": jaccard_continuity(g.snapshots()),
        "storage_bytes": storage_size(path)?,
        "edge_counts": g.snapshots().iter().map(|s| s.num_edges()).collect::<Vec<_>>(),
    }))
}

fn cmd_inspect(cfg: &mut RunConfig, a: &InspectArgs) -> Result<Value> {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if let Some(pair) = &a.compare {
        return Ok(json!({"real": diagnostics(&pair[0])?, "condensed": diagnostics(&pair[1])?}));
    }
    let data = require(&cfg.data, "--data")?.to_path_buf();
    let Some((lo, hi)) = a.sweep_k else {
        return diagnostics(&data);
    };
    apply_train(&mut cfg.train, &a.train);
    let mut model = apply_condense(cfg, &a.flags)?;
    let real = load_graph(&data)?;
    if cfg.condense.gamma > 0.0 && model.is_none() {
        model = Some(train_with_report(&real, &cfg.train)?.0);
    }
    let mut rows = Vec::new();
    for k in lo..=hi {
        let mut cc = cfg.condense.clone();
        cc.field.k = k;
        let (cg, _, _) = condense(&real, &cc, model.as_ref(), None)?;
        let r = evaluate_condensed(&real, &cg.to_dynamic_graph(), &cfg.train, cfg.eval.repeats, None)?;
        rows.push(json!({"k": k, "micro_f1": r["micro_f1"], "macro_f1": r["macro_f1"]}));
    }
    let result = json!({"sweep": rows});
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("sweep_k.json"), &result)?;
    }
    Ok(result)
}

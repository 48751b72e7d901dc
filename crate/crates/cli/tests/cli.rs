use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dygc::graphstore::load_dynamic_graph;
use dygc::{Graph, Model};
use serde_json::Value;

fn dygc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dygc")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = dygc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path) {
    ok_json(&["gen", "--n", "60", "--t", "3", "--c", "3", "--d", "4", "--seed", "7", "--out", p(dir)]);
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

#[test]
fn gen_is_loadable_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a);
    gen(&b);
    let g: Graph = load_dynamic_graph(&a).unwrap();
    assert_eq!((g.num_nodes(), g.num_steps(), g.num_classes(), g.feature_dim()), (60, 3, 3, 4));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn invalid_flags_fail_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dygc(&["gen", "--block-density", "1.5", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--block-density"), "{err}");
    assert!(!dygc(&["pretrain", "--data", p(&tmp.path().join("missing")), "--out", p(tmp.path())]).status.success());
}

#[test]
fn config_rejects_unknown_keys_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"synthetic": {"nodes": 10}}"#).unwrap();
    assert!(!dygc(&["--config", p(&bad), "gen", "--out", p(&tmp.path().join("x"))]).status.success());
    let good = tmp.path().join("good.json");
    fs::write(&good, r#"{"synthetic": {"num_nodes": 30, "num_steps": 2, "feature_dim": 3}}"#).unwrap();
    let v = ok_json(&["--config", p(&good), "gen", "--n", "24", "--out", p(&tmp.path().join("y"))]);
    assert_eq!(v["n"], 24);
    assert_eq!(v["T"], 2);
}

#[test]
fn pretrain_condense_eval_inspect_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let pre = tmp.path().join("pre");
    let m = ok_json(&["pretrain", "--data", p(&data), "--out", p(&pre), "--epochs", "10", "--hidden", "8"]);
    assert!(m["scores"]["test"]["micro_f1"].is_number());
    assert!(pre.join("metrics.json").exists());
    let ckpt = pre.join("model.bin");
    Model::load(&ckpt).unwrap();

    let cond = tmp.path().join("cond");
    let c = ok_json(&[
        "condense", "--data", p(&data), "--pretrained", p(&ckpt), "--ratio", "0.1", "--loops", "20",
        "--gamma", "0.1", "--k", "3", "--alpha", "0.5", "--out", p(&cond),
    ]);
    assert_eq!(c["report"]["iterations"], 20);
    assert_eq!(fs::read_to_string(cond.join("report.csv")).unwrap().lines().count(), 21);
    assert!(cond.join("generator_params.bin").exists());
    let cg: Graph = load_dynamic_graph(&cond).unwrap();
    assert_eq!(cg.num_nodes(), 3);

    assert!(!dygc(&["condense", "--data", p(&data), "--loops", "2", "--out", p(&tmp.path().join("z"))]).status.success());
    ok_json(&["condense", "--data", p(&data), "--gamma", "0", "--no-pretrained", "--loops", "2", "--out", p(&tmp.path().join("c0"))]);
    let r = ok_json(&["condense", "--data", p(&data), "--baseline", "random", "--out", p(&tmp.path().join("rnd"))]);
    assert_eq!(r["m"], 3);

    let e = ok_json(&[
        "eval", "--data", p(&data), "--condensed", p(&cond), "--whole", p(&ckpt), "--repeats", "2", "--epochs", "5",
        "--hidden", "8",
    ]);
    for key in ["micro_f1", "macro_f1"] {
        assert!(e[key]["mean"].is_number() && e[key]["std"].is_number());
    }
    assert!(e["fidelity"]["micro"].is_number());
    assert!(!dygc(&["eval", "--data", p(&data), "--condensed", p(&cond), "--whole", p(&tmp.path().join("none.bin"))])
        .status
        .success());

    let i = ok_json(&["inspect", "--data", p(&cond)]);
    assert_eq!(i["jaccard"].as_array().unwrap().len(), 2);
    assert_eq!(i["edge_counts"].as_array().unwrap().len(), 3);
    assert!(i["storage_bytes"].as_u64().unwrap() > 0);
    let both = ok_json(&["inspect", "--compare", p(&data), p(&cond)]);
    assert!(both["real"]["storage_bytes"].as_u64() > both["condensed"]["storage_bytes"].as_u64());
    let s = ok_json(&[
        "inspect", "--data", p(&data), "--sweep-k", "1..2", "--gamma", "0", "--no-pretrained", "--loops", "3",
        "--epochs", "3", "--hidden", "4",
    ]);
    let rows = s["sweep"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["k"], 2);
}

#[test]
fn zero_epoch_pretrain_writes_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let pre = tmp.path().join("pre");
    ok_json(&["pretrain", "--data", p(&data), "--out", p(&pre), "--epochs", "0", "--hidden", "5", "--seed", "3"]);
    let m = Model::load(&pre.join("model.bin")).unwrap();
    assert_eq!(m, Model::new(4, 5, 2, 3, 3).unwrap());
}

#[test]
fn condense_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok_json(&["condense", "--data", p(&data), "--gamma", "0", "--no-pretrained", "--loops", "8", "--seed", "5", "--out", p(&out)]);
        dir_bytes(&out).into_iter().filter(|(n, _)| n != "report.csv").collect::<Vec<_>>()
    };
    assert_eq!(run("a"), run("b"));
}

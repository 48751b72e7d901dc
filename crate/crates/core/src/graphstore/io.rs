//! Dataset directory format.
//!
//! ```text
//! manifest.json   {"T":..,"n":..,"d":..,"C":..,"format_version":1}
//! edges_<t>.txt   one "src dst" line per undirected edge, src < dst
//! features.bin    little-endian f32, [t][node][dim], no header
//! labels.txt      one integer per node, -1 = unlabeled
//! masks.txt       one of train|val|test|none per node
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Adjacency, DynamicGraph, Split, UNLABELED};
use crate::error::{Error, Result};
use crate::gradflow::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "T")]
    pub num_steps: usize,
    #[serde(rename = "n")]
    pub num_nodes: usize,
    #[serde(rename = "d")]
    pub feature_dim: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub format_version: u32,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_dynamic_graph<F: Scalar>(g: &DynamicGraph<F>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        num_steps: g.num_steps(),
        num_nodes: g.num_nodes(),
        feature_dim: g.feature_dim(),
        num_classes: g.num_classes(),
        format_version: FORMAT_VERSION,
    };
    let mut json = serde_json::to_string(&manifest)?;
    json.push('\n');
    write(dir.join("manifest.json"), json.as_bytes())?;

    for (t, snap) in g.snapshots().iter().enumerate() {
        let mut text = String::with_capacity(snap.num_edges() * 12);
        for &(u, v) in snap.edges() {
            text.push_str(&format!("{u} {v}\n"));
        }
        write(dir.join(format!("edges_{t}.txt")), text.as_bytes())?;
    }

    let mut blob = Vec::with_capacity(g.features().len() * 4);
    for &x in g.features().data() {
        let x = x
            .to_f32()
            .ok_or_else(|| Error::NonFinite(format!("feature {x} not representable as f32")))?;
        blob.extend_from_slice(&x.to_le_bytes());
    }
    write(dir.join("features.bin"), &blob)?;

    let mut labels = String::new();
    for l in g.labels() {
        let v = l.map_or(UNLABELED, |c| c as i64);
        labels.push_str(&format!("{v}\n"));
    }
    write(dir.join("labels.txt"), labels.as_bytes())?;

    let mut masks = String::new();
    for s in g.splits() {
        masks.push_str(s.token());
        masks.push('\n');
    }
    write(dir.join("masks.txt"), masks.as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Validation {
            path,
            msg: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    if manifest.num_steps == 0 || manifest.num_nodes == 0 || manifest.feature_dim == 0 || manifest.num_classes == 0 {
        return Err(Error::Validation {
            path,
            msg: "T, n, d and C must all be positive".into(),
        });
    }
    Ok(manifest)
}

fn parse_edges(path: &Path, n: usize) -> Result<Adjacency> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    let mut directed = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(err(format!("expected \"src dst\", got {line:?}")));
        };
        let a: usize = a.parse().map_err(|_| err(format!("bad node index {a:?}")))?;
        let b: usize = b.parse().map_err(|_| err(format!("bad node index {b:?}")))?;
        if a == b {
            return Err(err(format!("self-loop {a} {b}")));
        }
        if a >= n || b >= n {
            return Err(err(format!("node index out of range for n={n}")));
        }
        directed |= a > b;
        pairs.push((a, b, line_no));
    }
    if directed {
        // Both orientations listed: every arc needs its reverse.
        let arcs: std::collections::HashSet<(usize, usize)> = pairs.iter().map(|&(a, b, _)| (a, b)).collect();
        if let Some(&(a, b, line)) = pairs.iter().find(|&&(a, b, _)| !arcs.contains(&(b, a))) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("non-symmetric edge list: {a} {b} has no reverse"),
            });
        }
    }
    Adjacency::from_edges(n, pairs.into_iter().map(|(a, b, _)| (a, b)))
}

fn parse_lines<T>(path: &Path, n: usize, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != n {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            msg: format!("expected {n} lines, found {}", lines.len()),
        });
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse(l.trim()).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

pub fn load_dynamic_graph<F: Scalar>(dir: &Path) -> Result<DynamicGraph<F>> {
    let m = load_manifest(dir)?;
    let (t, n, d, c) = (m.num_steps, m.num_nodes, m.feature_dim, m.num_classes);

    let snapshots = (0..t)
        .map(|s| parse_edges(&dir.join(format!("edges_{s}.txt")), n))
        .collect::<Result<Vec<_>>>()?;

    let fpath = dir.join("features.bin");
    let blob = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
    let expected = t * n * d * 4;
    if blob.len() != expected {
        return Err(Error::Validation {
            path: fpath,
            msg: format!(
                "dimension mismatch: manifest implies {expected} bytes (T={t}, n={n}, d={d}), found {}",
                blob.len()
            ),
        });
    }
    let values: Vec<F> = blob
        .chunks_exact(4)
        .map(|b| F::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).expect("f32 converts"))
        .collect();
    let features = Tensor::new(&[t, n, d], values)?;

    let labels = parse_lines(&dir.join("labels.txt"), n, |s| {
        let v: i64 = s.parse().map_err(|_| format!("bad label {s:?}"))?;
        match v {
            UNLABELED => Ok(None),
            v if v >= 0 && (v as usize) < c => Ok(Some(v as usize)),
            v => Err(format!("label {v} out of range for C={c}")),
        }
    })?;
    let splits = parse_lines(&dir.join("masks.txt"), n, |s| {
        Split::parse(s).ok_or_else(|| format!("bad mask token {s:?}"))
    })?;

    DynamicGraph::new(c, snapshots, features, labels, splits).map_err(|e| Error::Validation {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    })
}

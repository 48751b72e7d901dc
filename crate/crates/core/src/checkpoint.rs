//! Binary parameter files: one compact JSON header line, then the parameter
//! tensors as little-endian `f64` in declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradflow::Tensor;
use crate::scalar::Scalar;

pub fn write_checkpoint<F: Scalar, H: Serialize>(path: &Path, header: &H, tensors: &[&Tensor<F>]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header)?;
    bytes.push(b'\n');
    for t in tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Header plus the raw parameter blob.
pub fn read_checkpoint<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Validation {
        path: path.to_path_buf(),
        msg: "missing header line".into(),
    })?;
    let header: H = serde_json::from_slice(&bytes[..split])?;
    let blob = &bytes[split + 1..];
    if blob.len() % 8 != 0 {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            msg: format!("parameter blob of {} bytes is not a whole number of f64", blob.len()),
        });
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

/// Splits a blob into tensors of the given shapes.
pub fn unpack<F: Scalar>(path: &Path, values: &[f64], shapes: &[Vec<usize>]) -> Result<Vec<Tensor<F>>> {
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if expected != values.len() {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            msg: format!("dimension mismatch: header implies {expected} parameters, blob has {}", values.len()),
        });
    }
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data = values[offset..offset + n].iter().map(|&v| F::lit(v)).collect();
            offset += n;
            Tensor::new(s, data)
        })
        .collect()
}

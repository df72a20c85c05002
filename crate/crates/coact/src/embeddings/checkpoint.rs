//! Checkpoint format: a directory of per-table binary files (little-endian
//! 64-bit floats, row-major) plus `manifest.txt` listing table name,
//! parameter set, shape, and a SHA-256 content checksum.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::embeddings::{ParamSet, ParameterStore};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_NAME: &str = "manifest.txt";

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes every tensor of the store into `dir`.
pub fn save_store(store: &ParameterStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for id in store.ids() {
        let name = store.name(id);
        let tensor = store.get(id);
        let bytes = tensor_bytes(tensor);
        let digest = hex_digest(&bytes);
        fs::write(dir.join(format!("{name}.bin")), &bytes)?;
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!(
            "{name} {} {} {digest}\n",
            store.set_of(id).as_str(),
            dims.join(",")
        ));
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Reads a checkpoint directory back into a store, verifying checksums.
pub fn load_store(dir: &Path) -> Result<ParameterStore> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut store = ParameterStore::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("manifest line `{line}` is not `name set shape checksum`"),
            });
        }
        let (name, set_str, dims_str, digest) = (parts[0], parts[1], parts[2], parts[3]);
        let set = ParamSet::parse(set_str)?;
        let shape: Vec<usize> = dims_str
            .split(',')
            .map(|d| {
                d.parse::<usize>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad dimension `{d}`"),
                })
            })
            .collect::<Result<_>>()?;
        let bytes = fs::read(dir.join(format!("{name}.bin")))?;
        if hex_digest(&bytes) != digest {
            return Err(Error::Numeric(format!(
                "checksum mismatch for table `{name}`"
            )));
        }
        if bytes.len() % 8 != 0 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("table `{name}` is not a whole number of f64s"),
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(name, set, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// True when two checkpoint directories hold byte-identical table files and
/// manifests.
pub fn checkpoints_identical(a: &Path, b: &Path) -> Result<bool> {
    let ma = fs::read(a.join(MANIFEST_NAME))?;
    let mb = fs::read(b.join(MANIFEST_NAME))?;
    if ma != mb {
        return Ok(false);
    }
    for line in String::from_utf8_lossy(&ma).lines() {
        if let Some(name) = line.split_whitespace().next() {
            let fa = fs::read(a.join(format!("{name}.bin")))?;
            let fb = fs::read(b.join(format!("{name}.bin")))?;
            if fa != fb {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

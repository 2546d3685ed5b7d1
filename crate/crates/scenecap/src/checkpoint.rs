//! Checkpoint serialization.
//!
//! Layout: 4-byte magic `SGAE`, format version (u32 LE), header length
//! (u64 LE), a JSON header, then all tensor payloads as f32 LE in header
//! order. The header carries an arbitrary JSON config blob, the RNG
//! stream position, and a tensor directory (name, shape, element count).
//! Values are held as f64 in memory but stored as f32, so a
//! save/load/save cycle is bit-identical even though a single save/load
//! rounds values to f32 precision.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGAE";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &SeededRng) -> Self {
        RngSnapshot {
            seed: rng.seed(),
            word_pos: rng.word_pos(),
        }
    }

    pub fn restore(&self) -> SeededRng {
        SeededRng::restore(self.seed, self.word_pos)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    rng: Option<RngSnapshot>,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint: parameters plus the training-state header.
#[derive(Debug)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub config: serde_json::Value,
    pub rng: Option<RngSnapshot>,
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    config: &serde_json::Value,
    rng: Option<&SeededRng>,
) -> Result<()> {
    let header = Header {
        config: config.clone(),
        rng: rng.map(RngSnapshot::capture),
        tensors: store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
                len: t.data().len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, t) in store.iter() {
        for &v in t.data().iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::Model(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    let bad = |what: &str| Error::Model(format!("checkpoint {}: {what}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| bad("truncated header length"))?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|_| bad("malformed header"))?;

    let mut store = ParamStore::new();
    for e in &header.tensors {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(bad(&format!("tensor {} shape/len mismatch", e.name)));
        }
        let mut bytes = vec![0u8; e.len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(&format!("truncated payload for tensor {}", e.name)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(&format!("non-finite values in tensor {}", e.name)));
        }
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        store,
        config: header.config,
        rng: header.rng,
    })
}

//! Checkpoint directory layout:
//!
//! * `manifest.tsv`: a `# mbssl-checkpoint v<N>` header, then one
//!   `name<TAB>shape<TAB>offset<TAB>count` line per tensor, where `shape`
//!   is `x`-separated and `offset`/`count` are in 8-byte floats;
//! * `params.bin`: an 8-byte magic, a little-endian `u32` version and a
//!   `u32` tensor count, followed by every tensor's values as little-endian
//!   `f64` in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MBSSLPRM";
const HEADER: usize = 16;

pub fn save_checkpoint(dir: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = format!("# mbssl-checkpoint v{CHECKPOINT_VERSION}\n");
    let mut payload = Vec::with_capacity(HEADER + 8 * store.iter().map(|(_, _, t)| t.len()).sum::<usize>());
    payload.extend_from_slice(MAGIC);
    payload.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    payload.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut offset = 0;
    for (_, name, t) in store.iter() {
        let shape: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        manifest.push_str(&format!("{name}\t{}\t{offset}\t{}\n", shape.join("x"), t.len()));
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    let mut f = fs::File::create(dir.join("params.bin"))?;
    f.write_all(&payload)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ParamStore> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join("manifest.tsv"))?;
    let payload = fs::read(dir.join("params.bin"))?;

    let mut lines = manifest.lines();
    let header = lines.next().ok_or_else(|| bad("empty manifest"))?;
    let version: u32 = header
        .strip_prefix("# mbssl-checkpoint v")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(format!("unrecognised manifest header {header:?}")))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    if payload.len() < HEADER || &payload[..8] != MAGIC {
        return Err(bad("params.bin has no valid header"));
    }
    let bin_version = u32::from_le_bytes(payload[8..12].try_into().expect("4 bytes"));
    let count = u32::from_le_bytes(payload[12..16].try_into().expect("4 bytes")) as usize;
    if bin_version != version {
        return Err(bad("manifest and payload versions differ"));
    }
    let floats = &payload[HEADER..];
    if floats.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }

    let mut store = ParamStore::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("manifest line {} malformed", n + 2)));
        }
        let shape: Vec<usize> = fields[1]
            .split('x')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad(format!("bad shape {:?}", fields[1]))))
            .collect::<Result<_>>()?;
        let offset: usize = fields[2].parse().map_err(|_| bad("bad offset"))?;
        let len: usize = fields[3].parse().map_err(|_| bad("bad count"))?;
        let end = offset + len;
        if end * 8 > floats.len() {
            return Err(bad(format!("tensor {} runs past the payload", fields[0])));
        }
        let data = floats[offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(fields[0], Tensor::new(shape, data)?)?;
    }
    if store.len() != count {
        return Err(bad(format!("manifest lists {} tensors, payload {count}", store.len())));
    }
    Ok(store)
}

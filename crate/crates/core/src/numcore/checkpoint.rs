//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TSUMCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header:
//!                 {"meta": <any>, "params": [{"name": s, "shape": [..]}, ..],
//!                  "adam": null | {"step_count", "lr", "beta1", "beta2", "eps"}}
//! 20+H    ..    parameter data: for each header param in order, its
//!               elements as f64 little-endian, row-major
//!         ..    if "adam" is present: first moments for every param in
//!               order, then second moments, same encoding
//! ```
//!
//! Nothing follows the last block; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::adam::AdamState;
use crate::numcore::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"TSUMCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step_count: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
    adam: Option<AdamHeader>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn put_floats(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &ParamStore, adam: Option<&AdamState>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        params: params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
        adam: adam.map(|a| AdamHeader {
            step_count: a.step_count,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + params.scalar_count() * 8 * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, t) in params.iter() {
        put_floats(&mut out, &t.data);
    }
    if let Some(a) = adam {
        if a.first_moment.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for m in &a.first_moment {
            put_floats(&mut out, m);
        }
        for v in &a.second_moment {
            put_floats(&mut out, v);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let mut params = ParamStore::new();
    for p in &header.params {
        let n = p.shape.iter().product();
        params.add(p.name.clone(), Tensor::new(p.shape.clone(), r.floats(n)?)?)?;
    }
    let adam = match header.adam {
        None => None,
        Some(h) => {
            let sizes: Vec<usize> = header.params.iter().map(|p| p.shape.iter().product()).collect();
            let first = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
            let second = sizes.iter().map(|&n| r.floats(n)).collect::<Result<Vec<_>>>()?;
            Some(AdamState {
                step_count: h.step_count,
                lr: h.lr,
                beta1: h.beta1,
                beta2: h.beta2,
                eps: h.eps,
                first_moment: first,
                second_moment: second,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
        adam,
    })
}

pub fn write_checkpoint(
    path: &Path,
    params: &ParamStore,
    adam: Option<&AdamState>,
    meta: &serde_json::Value,
) -> Result<()> {
    let bytes = encode_checkpoint(params, adam, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

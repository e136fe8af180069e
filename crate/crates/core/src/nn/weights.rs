//! `BLSSMK01` weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "BLSSMK01"
//! layers     u32
//! per layer  u8 kind, u32 ndims, ndims × u32 dims, raw f64 weights then biases
//! metadata   u32 entries, per entry u32 len + UTF-8 key, u32 len + UTF-8 value
//! ```
//!
//! Kind tags: 1 conv `(out, in, k, k)`, 2 dense `(out, in)`, 3 relu,
//! 4 sigmoid, 5 softmax, 6 flatten. Parameter-free layers carry no dims.

use std::collections::BTreeMap;

use super::layers::{Conv2d, Dense, Layer};
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BLSSMK01";
const MAGIC_FAMILY: &[u8; 6] = b"BLSSMK";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkWeights {
    pub network: Network,
    pub metadata: BTreeMap<String, String>,
}

impl NetworkWeights {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta(key).and_then(|v| v.parse().ok())
    }
}

pub fn save_weights(weights: &NetworkWeights) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, weights.network.layers.len());
    for layer in &weights.network.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(1);
                put_dims(&mut out, &[c.out_channels, c.in_channels, c.kernel, c.kernel]);
                put_f64s(&mut out, &c.weight);
                put_f64s(&mut out, &c.bias);
            }
            Layer::Dense(d) => {
                out.push(2);
                put_dims(&mut out, &[d.outputs, d.inputs]);
                put_f64s(&mut out, &d.weight);
                put_f64s(&mut out, &d.bias);
            }
            Layer::Relu => simple(&mut out, 3),
            Layer::Sigmoid => simple(&mut out, 4),
            Layer::Softmax => simple(&mut out, 5),
            Layer::Flatten => simple(&mut out, 6),
        }
    }
    put_u32(&mut out, weights.metadata.len());
    for (k, v) in &weights.metadata {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out
}

pub fn load_weights(bytes: &[u8]) -> Result<NetworkWeights> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        if magic.starts_with(MAGIC_FAMILY) {
            return Err(Error::Weights(format!(
                "unsupported format version {:?}",
                String::from_utf8_lossy(&magic[6..])
            )));
        }
        return Err(Error::Weights("bad magic".into()));
    }
    let count = r.u32()?;
    let mut layers = Vec::new();
    for index in 0..count {
        let kind = r.take(1)?[0];
        let ndims = r.u32()?;
        if ndims > 8 {
            return Err(Error::Weights(format!("layer {index}: implausible rank {ndims}")));
        }
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let layer = match (kind, dims.as_slice()) {
            (1, &[out, inp, k, k2]) if k == k2 => {
                let weight = r.f64s(out * inp * k * k)?;
                let bias = r.f64s(out)?;
                Layer::Conv(Conv2d::new(inp, out, k, weight, bias)?)
            }
            (2, &[out, inp]) => {
                let weight = r.f64s(out * inp)?;
                let bias = r.f64s(out)?;
                Layer::Dense(Dense::new(inp, out, weight, bias)?)
            }
            (3, []) => Layer::Relu,
            (4, []) => Layer::Sigmoid,
            (5, []) => Layer::Softmax,
            (6, []) => Layer::Flatten,
            _ => {
                return Err(Error::Weights(format!(
                    "layer {index}: unknown kind {kind} with dims {dims:?}"
                )))
            }
        };
        layers.push(layer);
    }
    let entries = r.u32()?;
    let mut metadata = BTreeMap::new();
    for _ in 0..entries {
        let k = r.string()?;
        let v = r.string()?;
        metadata.insert(k, v);
    }
    Ok(NetworkWeights {
        network: Network::new(layers),
        metadata,
    })
}

fn simple(out: &mut Vec<u8>, tag: u8) {
    out.push(tag);
    put_u32(out, 0);
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    put_u32(out, dims.len());
    dims.iter().for_each(|&d| put_u32(out, d));
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| Error::Weights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Weights("parameter count overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Weights("metadata is not UTF-8".into()))
    }
}

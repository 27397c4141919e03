//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `MRTSCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then raw
//! little-endian `f64` payloads: every parameter in header order, followed by
//! the optimizer's first and second moments when present.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MRTSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerEntry {
    config: AdamConfig,
    t: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form description (model config, global step, ...).
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

fn bad(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NumericsError> {
        let header = Header {
            meta: self.meta.clone(),
            params: self
                .params
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|a| OptimizerEntry { config: a.config, t: a.t }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 8 * self.params.count() * 3 + 20);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor| {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, p) in self.params.iter() {
            put(&p.value);
        }
        if let Some(adam) = &self.optimizer {
            adam.m.iter().chain(&adam.v).for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, NumericsError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(b8) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len]).map_err(|e| bad(e.to_string()))?;
        r = &r[len..];

        let mut take = |shape: &[usize]| -> Result<Tensor, NumericsError> {
            let n: usize = shape.iter().product();
            if r.len() < n * 8 {
                return Err(bad("truncated payload"));
            }
            let data = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r = &r[n * 8..];
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamStore::new();
        for e in &header.params {
            let t = take(&e.shape)?;
            params.add(e.name.clone(), t);
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let m = header.params.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>, _>>()?;
                let v = header.params.iter().map(|e| take(&e.shape)).collect::<Result<Vec<_>, _>>()?;
                Some(Adam {
                    config: o.config,
                    t: o.t,
                    m,
                    v,
                })
            }
        };
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint {
            meta: header.meta,
            params,
            optimizer,
        })
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, NumericsError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::ParamId;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("a.w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]));
        params.add("a.b", Tensor::row_vector(vec![0.1, 0.2]));
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let mut g = params.zero_grads();
        g.get_mut(ParamId(0)).fill(0.5);
        adam.step(&mut params, &g, 1e-3).unwrap();
        Checkpoint {
            meta: serde_json::json!({"global_step": 12}),
            params,
            optimizer: Some(adam),
        }
    }

    #[test]
    fn round_trips_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut wrong = bytes;
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}

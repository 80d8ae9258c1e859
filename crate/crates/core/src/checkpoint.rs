//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SPFLCKPT"
//! version      u32      1
//! n_layers     u32      number of entries in layer_sizes
//! layer_sizes  u64 × n_layers
//! d            u64      parameter count, must equal the one implied by layer_sizes
//! weights      f64 × d
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::MlpSpec;
use crate::spectrum::ParamVector;

pub const MAGIC: &[u8; 8] = b"SPFLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: ParamVector,
}

impl Checkpoint {
    pub fn new(spec: &MlpSpec, weights: ParamVector) -> Result<Self> {
        if weights.len() != spec.param_count() {
            return Err(Error::Checkpoint(format!(
                "{} weights do not fit layer sizes {:?}",
                weights.len(),
                spec.layer_sizes
            )));
        }
        Ok(Checkpoint {
            layer_sizes: spec.layer_sizes.clone(),
            weights,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.weights.len();
        let mut out = Vec::with_capacity(24 + 8 * (self.layer_sizes.len() + d));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&(d as u64).to_le_bytes());
        for w in self.weights.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_layers = r.u32()? as usize;
        if !(2..=1024).contains(&n_layers) {
            return Err(Error::Checkpoint(format!(
                "implausible layer count {n_layers}"
            )));
        }
        let layer_sizes = (0..n_layers)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let expected = layer_sizes
            .windows(2)
            .try_fold(0usize, |acc, w| {
                w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
            })
            .ok_or_else(|| Error::Checkpoint("layer sizes overflow".into()))?;
        let d = r.u64()? as usize;
        if d != expected {
            return Err(Error::Checkpoint(format!(
                "stored d = {d} but layer sizes {layer_sizes:?} imply {expected}"
            )));
        }
        if r.remaining() != d.saturating_mul(8) {
            return Err(Error::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                d.saturating_mul(8),
                r.remaining()
            )));
        }
        let weights: Vec<f64> = r
            .take(d * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let weights = ParamVector::new(weights).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            layer_sizes,
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

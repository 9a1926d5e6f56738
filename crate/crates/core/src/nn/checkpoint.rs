//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        b"KARC"
//! version      u16 (= 1)
//! meta_count   u32
//!   key_len u16, key bytes, value_len u32, value bytes      (meta_count times)
//! tensor_count u32
//!   name_len u16, name bytes, ndim u32, dims u64 x ndim,
//!   payload f64 x prod(dims)                                (tensor_count times)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;

use super::adam::Adam;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::binio::{put_short_str, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KARC";
const VERSION: u16 = 1;
const ADAM_M: &str = "__adam.m/";
const ADAM_V: &str = "__adam.v/";
const ADAM_STEP: &str = "__adam.step";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: IndexMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let tensors = store
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect();
        Self {
            metadata: BTreeMap::new(),
            tensors,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint missing metadata key {key}")))
    }

    /// Stores optimizer moments alongside the parameters so training can resume.
    pub fn add_optimizer(&mut self, store: &ParamStore, adam: &Adam) {
        for (id, name, _) in store.iter() {
            let (m, v) = adam.moments(id);
            self.tensors.insert(format!("{ADAM_M}{name}"), m.clone());
            self.tensors.insert(format!("{ADAM_V}{name}"), v.clone());
        }
        self.metadata.insert(ADAM_STEP.into(), adam.steps().to_string());
    }

    /// Copies every parameter of `store` from the checkpoint, by name.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing parameter {name}")))?;
            store.set(id, t.clone())?;
        }
        Ok(())
    }

    pub fn load_optimizer(&self, store: &ParamStore, adam: &mut Adam) -> Result<()> {
        let step = self
            .meta(ADAM_STEP)?
            .parse()
            .map_err(|e| Error::Format(format!("bad optimizer step: {e}")))?;
        let mut moments = Vec::with_capacity(store.len());
        for (_, name, _) in store.iter() {
            let get = |prefix: &str| {
                self.tensors
                    .get(&format!("{prefix}{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("checkpoint missing optimizer state for {name}")))
            };
            moments.push((get(ADAM_M)?, get(ADAM_V)?));
        }
        adam.restore(step, moments)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_short_str(&mut out, k)?;
            put_u32(&mut out, v.len() as u32);
            out.extend_from_slice(v.as_bytes());
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_short_str(&mut out, name)?;
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "checkpoint");
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let klen = r.u16()? as usize;
            let k = r.string(klen)?;
            let vlen = r.u32()? as usize;
            let v = r.string(vlen)?;
            metadata.insert(k, v);
        }
        let mut tensors = IndexMap::new();
        for _ in 0..r.u32()? {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        r.finish()?;
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store
            .add("a", Tensor::new(vec![2, 2], vec![-0.0, f64::MIN_POSITIVE / 4.0, 1e300, -7.25]).unwrap())
            .unwrap();
        store.add("b.bias", Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
        let ck = Checkpoint::from_store(&store).with_meta("seed", 42);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.meta("seed").unwrap(), "42");
        for (name, t) in &ck.tensors {
            let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let got: Vec<u64> = back.tensors[name].data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, got);
            assert_eq!(t.shape(), back.tensors[name].shape());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let ck = Checkpoint::default();
        let mut bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..5]).is_err());
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}

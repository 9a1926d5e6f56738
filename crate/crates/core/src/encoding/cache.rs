//! `KARV` vector cache.
//!
//! ```text
//! magic      b"KARV"
//! version    u16 (= 1)
//! dim        u32
//! count      u64
//! index      (key_len u16, key bytes, kind u8, row u64) x count
//! rows       f32 x dim x count, little-endian
//! ```
//!
//! `row` is the zero-based position of the record's vector in the row
//! block. File size is exactly
//! `18 + sum(11 + key_len) + 4 * dim * count` bytes.

use std::collections::HashMap;
use std::path::Path;

use crate::binio::{put_short_str, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::kind::{EntityKey, KnowledgeKind};

const MAGIC: &[u8; 4] = b"KARV";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 4 + 8;
const INDEX_FIXED_BYTES: usize = 2 + 1 + 8;

/// Dense f32 rows addressable by [`EntityKey`].
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationCache {
    dim: usize,
    keys: Vec<EntityKey>,
    index: HashMap<EntityKey, usize>,
    rows: Vec<f32>,
}

impl RepresentationCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[EntityKey] {
        &self.keys
    }

    /// Inserts or overwrites the vector for `key`.
    pub fn insert(&mut self, key: EntityKey, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Store(format!(
                "vector for {key} has dimension {}, cache holds {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(&row) = self.index.get(&key) {
            log::warn!("overwriting cached vector for {key}");
            self.rows[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector);
            return Ok(());
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.rows.extend_from_slice(vector);
        Ok(())
    }

    pub fn row_of(&self, key: &EntityKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.rows[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, key: &EntityKey) -> Result<&[f32]> {
        self.row_of(key)
            .map(|r| self.row(r))
            .ok_or_else(|| Error::NotFound(format!("no cached vector for {key}")))
    }

    pub fn contains(&self, key: &EntityKey) -> bool {
        self.index.contains_key(key)
    }

    /// Exact serialized size for the given dimension and keys.
    pub fn file_size(dim: usize, keys: &[EntityKey]) -> usize {
        HEADER_BYTES
            + keys
                .iter()
                .map(|k| INDEX_FIXED_BYTES + k.entity_id.len())
                .sum::<usize>()
            + 4 * dim * keys.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(Self::file_size(self.dim, &self.keys));
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u32(&mut out, self.dim as u32);
        put_u64(&mut out, self.keys.len() as u64);
        for (row, key) in self.keys.iter().enumerate() {
            put_short_str(&mut out, &key.entity_id)?;
            out.push(key.kind.as_byte());
            put_u64(&mut out, row as u64);
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "vector cache");
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = r.string(len)?;
            let kind = KnowledgeKind::from_byte(r.u8()?)?;
            let row = r.u64()? as usize;
            entries.push((EntityKey::new(id, kind), row));
        }
        let data: Vec<f32> = (0..dim * count).map(|_| r.f32()).collect::<Result<_>>()?;
        r.finish()?;

        // Every row must be referenced exactly once.
        let mut seen = vec![false; count];
        let mut cache = Self::new(dim);
        let mut by_row: Vec<Option<EntityKey>> = vec![None; count];
        for (key, row) in entries {
            if row >= count || std::mem::replace(&mut seen[row], true) {
                return Err(Error::Format(format!("row offset {row} out of range or repeated")));
            }
            by_row[row] = Some(key);
        }
        for (row, key) in by_row.into_iter().enumerate() {
            let key = key.expect("every row seen");
            if cache.contains(&key) {
                return Err(Error::Format(format!("duplicate key {key} in cache index")));
            }
            cache.insert(key, &data[row * dim..(row + 1) * dim])?;
        }
        Ok(cache)
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

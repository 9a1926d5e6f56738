//! `KARS` sample file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          b"KARS"
//! version        u16 (= 1)
//! num_fields     u32                      F
//! max_history    u32                      L
//! item_field     u32, category_field u32, rating_size u32
//! per field      name_len u16, name bytes, vocab_size u32      (F times)
//! key_count      u32
//!   key_len u16, key bytes                                     (key_count times)
//! row_count      u64
//! rows           u32 x (5 + F + 3L):
//!   user_key, item_key, timestamp, label, fields[F], history_len,
//!   (item, category, rating) x L, zero padded after history_len
//! ```
//!
//! User and item ids are stored once in the key table; rows refer to them
//! by position.

use std::collections::HashMap;
use std::path::Path;

use super::samples::{HistoryEntry, Sample, SampleSchema};
use crate::binio::{put_short_str, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KARS";
const VERSION: u16 = 1;

fn to_u32(v: u64, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode_samples(schema: &SampleSchema, samples: &[Sample]) -> Result<Vec<u8>> {
    let mut keys: Vec<&str> = Vec::new();
    let mut key_index: HashMap<&str, u32> = HashMap::new();
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        schema.validate(s)?;
        let mut ids = [0u32; 2];
        for (slot, k) in ids.iter_mut().zip([s.user_id.as_str(), s.item_id.as_str()]) {
            *slot = *key_index.entry(k).or_insert_with(|| {
                keys.push(k);
                keys.len() as u32 - 1
            });
        }
        rows.push((ids[0], ids[1], s));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    put_u32(&mut out, schema.num_fields() as u32);
    put_u32(&mut out, schema.max_history as u32);
    put_u32(&mut out, schema.item_field as u32);
    put_u32(&mut out, schema.category_field as u32);
    put_u32(&mut out, schema.rating_size as u32);
    for (name, &size) in schema.field_names.iter().zip(&schema.field_sizes) {
        put_short_str(&mut out, name)?;
        put_u32(&mut out, size as u32);
    }
    put_u32(&mut out, keys.len() as u32);
    for k in &keys {
        put_short_str(&mut out, k)?;
    }
    put_u64(&mut out, rows.len() as u64);
    for (u, i, s) in rows {
        put_u32(&mut out, u);
        put_u32(&mut out, i);
        put_u32(&mut out, to_u32(s.timestamp, "timestamp")?);
        put_u32(&mut out, s.label as u32);
        for &f in &s.fields {
            put_u32(&mut out, f);
        }
        put_u32(&mut out, s.history.len() as u32);
        for slot in 0..schema.max_history {
            let h = s.history.get(slot).copied().unwrap_or(HistoryEntry {
                item: 0,
                category: 0,
                rating: 0,
            });
            put_u32(&mut out, h.item);
            put_u32(&mut out, h.category);
            put_u32(&mut out, h.rating as u32);
        }
    }
    Ok(out)
}

pub fn decode_samples(buf: &[u8]) -> Result<(SampleSchema, Vec<Sample>)> {
    let mut r = Reader::new(buf, "sample file");
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported sample file version {version}")));
    }
    let num_fields = r.u32()? as usize;
    let max_history = r.u32()? as usize;
    let item_field = r.u32()? as usize;
    let category_field = r.u32()? as usize;
    let rating_size = r.u32()? as usize;
    let mut field_names = Vec::with_capacity(num_fields);
    let mut field_sizes = Vec::with_capacity(num_fields);
    for _ in 0..num_fields {
        let len = r.u16()? as usize;
        field_names.push(r.string(len)?);
        field_sizes.push(r.u32()? as usize);
    }
    if item_field >= num_fields || category_field >= num_fields {
        return Err(Error::Format("item/category field index out of range".into()));
    }
    let key_count = r.u32()? as usize;
    let mut keys = Vec::with_capacity(key_count);
    for _ in 0..key_count {
        let len = r.u16()? as usize;
        keys.push(r.string(len)?);
    }
    let schema = SampleSchema {
        field_names,
        field_sizes,
        item_field,
        category_field,
        rating_size,
        max_history,
    };
    let row_count = r.u64()? as usize;
    let key = |k: u32| {
        keys.get(k as usize)
            .cloned()
            .ok_or_else(|| Error::Format(format!("key index {k} out of range")))
    };
    let mut samples = Vec::with_capacity(row_count);
    for _ in 0..row_count {
        let user_id = key(r.u32()?)?;
        let item_id = key(r.u32()?)?;
        let timestamp = r.u32()? as u64;
        let label = r.u32()?;
        let fields = (0..num_fields).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = r.u32()? as usize;
        if len > max_history {
            return Err(Error::Format(format!("history length {len} > {max_history}")));
        }
        let mut history = Vec::with_capacity(len);
        for slot in 0..max_history {
            let (item, category, rating) = (r.u32()?, r.u32()?, r.u32()?);
            if slot < len {
                history.push(HistoryEntry {
                    item,
                    category,
                    rating: rating as u8,
                });
            }
        }
        let s = Sample {
            user_id,
            item_id,
            timestamp,
            fields,
            history,
            label: label as u8,
        };
        schema.validate(&s).map_err(|e| Error::Format(e.to_string()))?;
        samples.push(s);
    }
    r.finish()?;
    Ok((schema, samples))
}

pub fn write_samples(path: impl AsRef<Path>, schema: &SampleSchema, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_samples(schema, samples)?).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<(SampleSchema, Vec<Sample>)> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_samples(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SampleSchema {
        SampleSchema {
            field_names: vec!["user_id".into(), "item_id".into(), "category".into()],
            field_sizes: vec![4, 5, 3],
            item_field: 1,
            category_field: 2,
            rating_size: 6,
            max_history: 3,
        }
    }

    #[test]
    fn round_trip_and_row_width() {
        let samples = vec![
            Sample {
                user_id: "10".into(),
                item_id: "7".into(),
                timestamp: 978300760,
                fields: vec![1, 2, 1],
                history: vec![],
                label: 1,
            },
            Sample {
                user_id: "10".into(),
                item_id: "8".into(),
                timestamp: 978300761,
                fields: vec![1, 4, 2],
                history: vec![HistoryEntry { item: 2, category: 1, rating: 5 }],
                label: 0,
            },
        ];
        let bytes = encode_samples(&schema(), &samples).unwrap();
        let (back_schema, back) = decode_samples(&bytes).unwrap();
        assert_eq!(back_schema, schema());
        assert_eq!(back, samples);
        // Header: 4 + 2 + 5*4, fields: 3 names, keys: "10","7","8", count: 8.
        let header = 4 + 2 + 20 + (2 + 7 + 4) + (2 + 7 + 4) + (2 + 8 + 4) + 4 + (2 + 2) + (2 + 1) + (2 + 1) + 8;
        let row = 4 * (5 + 3 + 3 * 3);
        assert_eq!(bytes.len(), header + 2 * row);
    }

    #[test]
    fn rejects_out_of_vocabulary_rows() {
        let bad = Sample {
            user_id: "1".into(),
            item_id: "1".into(),
            timestamp: 0,
            fields: vec![9, 0, 0],
            history: vec![],
            label: 0,
        };
        assert!(encode_samples(&schema(), &[bad]).is_err());
    }
}

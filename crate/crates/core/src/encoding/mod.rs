//! Knowledge text to fixed-size vectors: a pluggable per-token encoder,
//! an aggregation over tokens, and the binary prestore.

mod cache;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use cache::RepresentationCache;

use crate::error::{Error, Result};
use crate::kind::EntityKey;

pub const DEFAULT_DIM: usize = 64;
pub const MAX_DIM: usize = 4096;

/// Per-token vectors for one text: `tokens x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Encode(format!(
                "token matrix of {} values is not a non-empty multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Encode("token rows differ in dimension".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Turns a knowledge text into one vector per token.
pub trait TokenEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// `key` identifies the text; encoders backed by precomputed vectors
    /// use it for lookup, text-based encoders ignore it.
    fn encode(&self, key: &EntityKey, text: &str) -> Result<TokenMatrix>;
}

pub fn encode_tokens(encoder: &dyn TokenEncoder, key: &EntityKey, text: &str) -> Result<TokenMatrix> {
    if text.trim().is_empty() {
        return Err(Error::Encode(format!("empty text for {key}")));
    }
    let m = encoder.encode(key, text)?;
    if m.dim() != encoder.dim() {
        return Err(Error::Encode(format!(
            "encoder produced dimension {}, declared {}",
            m.dim(),
            encoder.dim()
        )));
    }
    Ok(m)
}

/// Offline encoder: whitespace tokens, each mapped to a pseudo-random
/// vector in `[-1, 1]^dim` seeded by a hash of `(seed, token)`.
///
/// Tokens are lowercased and stripped of leading/trailing ASCII
/// punctuation; a token that is all punctuation is kept as-is.
#[derive(Clone, Debug)]
pub struct HashingEncoder {
    dim: usize,
    seed: u64,
}

impl HashingEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("encoder dimension {dim} not in [1, {MAX_DIM}]")));
        }
        Ok(Self { dim, seed })
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| {
                let trimmed = t.trim_matches(|c: char| c.is_ascii_punctuation());
                if trimmed.is_empty() { t } else { trimmed }.to_lowercase()
            })
            .collect()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(word);
        (0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

impl TokenEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _key: &EntityKey, text: &str) -> Result<TokenMatrix> {
        let tokens = Self::tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Encode("text has no tokens".into()));
        }
        let data = tokens.iter().flat_map(|t| self.token_vector(t)).collect();
        TokenMatrix::new(self.dim, data)
    }
}

/// Encoder backed by vectors exported from an external model, stored in
/// the cache container. A record keyed by the entity id yields a single
/// row; otherwise records `"{id}#0"`, `"{id}#1"`, ... are read as tokens.
#[derive(Clone, Debug)]
pub struct PrecomputedEncoder {
    cache: RepresentationCache,
}

impl PrecomputedEncoder {
    pub fn new(cache: RepresentationCache) -> Self {
        Self { cache }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(RepresentationCache::load(path)?))
    }
}

impl TokenEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn encode(&self, key: &EntityKey, _text: &str) -> Result<TokenMatrix> {
        let widen = |row: &[f32]| row.iter().map(|&v| v as f64).collect::<Vec<_>>();
        if let Ok(row) = self.cache.get(key) {
            return TokenMatrix::new(self.dim(), widen(row));
        }
        let mut data = Vec::new();
        for t in 0.. {
            let token_key = EntityKey::new(format!("{}#{t}", key.entity_id), key.kind);
            match self.cache.get(&token_key) {
                Ok(row) => data.extend(widen(row)),
                Err(_) => break,
            }
        }
        if data.is_empty() {
            return Err(Error::NotFound(format!("no precomputed vectors for {key}")));
        }
        TokenMatrix::new(self.dim(), data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Arithmetic mean over tokens.
    #[default]
    Avg,
    /// The final token's vector.
    Last,
    /// Mean with weights `t / (1 + 2 + ... + T)` for token `t = 1..T`.
    Wavg,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Aggregation::Avg),
            "last" => Ok(Aggregation::Last),
            "wavg" => Ok(Aggregation::Wavg),
            _ => Err(Error::Config(format!(
                "unknown aggregation {s:?}; expected avg, last or wavg"
            ))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Avg => "avg",
            Aggregation::Last => "last",
            Aggregation::Wavg => "wavg",
        })
    }
}

/// Token weights used by `wavg`: positive, nondecreasing, summing to one.
pub fn wavg_weights(tokens: usize) -> Vec<f64> {
    let total = (tokens * (tokens + 1) / 2) as f64;
    (1..=tokens).map(|t| t as f64 / total).collect()
}

pub fn aggregate_rows(tokens: &TokenMatrix, method: Aggregation) -> Vec<f64> {
    let (t, dim) = (tokens.tokens(), tokens.dim());
    match method {
        Aggregation::Last => tokens.row(t - 1).to_vec(),
        Aggregation::Avg | Aggregation::Wavg => {
            let weights = match method {
                Aggregation::Avg => vec![1.0 / t as f64; t],
                _ => wavg_weights(t),
            };
            let mut out = vec![0.0; dim];
            for (i, w) in weights.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(tokens.row(i)) {
                    *o += w * v;
                }
            }
            out
        }
    }
}

/// Dense semantic vector for one knowledge text.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeRepresentation {
    pub key: EntityKey,
    pub vector: Vec<f32>,
}

pub fn aggregate(key: EntityKey, tokens: &TokenMatrix, method: Aggregation) -> Result<KnowledgeRepresentation> {
    let vector: Vec<f32> = aggregate_rows(tokens, method).into_iter().map(|v| v as f32).collect();
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Encode(format!("non-finite representation for {key}")));
    }
    Ok(KnowledgeRepresentation { key, vector })
}

/// Encodes and aggregates every `(key, text)` with `workers` threads.
/// Output order matches input order.
pub fn encode_all(
    encoder: &dyn TokenEncoder,
    items: &[(EntityKey, String)],
    method: Aggregation,
    workers: usize,
) -> Result<Vec<KnowledgeRepresentation>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<KnowledgeRepresentation>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((key, text)) = items.get(i) else { break };
                let rep = encode_tokens(encoder, key, text).and_then(|m| aggregate(key.clone(), &m, method));
                slots.lock().expect("no panics while holding the lock")[i] = Some(rep);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Writes representations to a cache file and returns the cache.
pub fn prestore(reps: &[KnowledgeRepresentation], path: impl AsRef<Path>) -> Result<RepresentationCache> {
    let dim = reps
        .first()
        .map(|r| r.vector.len())
        .ok_or_else(|| Error::Store("nothing to prestore".into()))?;
    let mut cache = RepresentationCache::new(dim);
    for r in reps {
        cache.insert(r.key.clone(), &r.vector)?;
    }
    cache.save(path)?;
    Ok(cache)
}

/// Writes augmented vectors (dimension q) to a cache file; same contract as
/// [`prestore`].
pub fn prestore_augmented(
    vectors: &[crate::adaptor::AugmentedVector],
    path: impl AsRef<Path>,
) -> Result<RepresentationCache> {
    let reps: Vec<KnowledgeRepresentation> = vectors
        .iter()
        .map(|v| KnowledgeRepresentation {
            key: v.key.clone(),
            vector: v.vector.clone(),
        })
        .collect();
    prestore(&reps, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn avg_last_wavg_examples() {
        let m = rows(&[&[1.0, 3.0], &[3.0, 5.0]]);
        assert_eq!(aggregate_rows(&m, Aggregation::Avg), vec![2.0, 4.0]);
        assert_eq!(aggregate_rows(&m, Aggregation::Last), vec![3.0, 5.0]);
        // Independent weighted sum: 1/3 * row0 + 2/3 * row1.
        let w = aggregate_rows(&m, Aggregation::Wavg);
        let want = [1.0 / 3.0 * 1.0 + 2.0 / 3.0 * 3.0, 1.0 / 3.0 * 3.0 + 2.0 / 3.0 * 5.0];
        assert!((w[0] - want[0]).abs() < 1e-12 && (w[1] - want[1]).abs() < 1e-12);
        assert!((w[0] - 7.0 / 3.0).abs() < 1e-12 && (w[1] - 13.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_aggregation_is_config_error() {
        assert!(matches!("cls".parse::<Aggregation>(), Err(Error::Config(_))));
    }

    #[test]
    fn hashing_encoder_rows_are_token_vectors() {
        let enc = HashingEncoder::new(8, 3).unwrap();
        let key = EntityKey::user("u");
        let m = encode_tokens(&enc, &key, "a b").unwrap();
        assert_eq!(m.tokens(), 2);
        assert_eq!(m.row(0), enc.token_vector("a").as_slice());
        assert_eq!(m.row(1), enc.token_vector("b").as_slice());
        assert_eq!(m, encode_tokens(&enc, &key, "a b").unwrap());
        assert!(matches!(encode_tokens(&enc, &key, "  "), Err(Error::Encode(_))));
    }

    #[test]
    fn precomputed_lookup() {
        let mut cache = RepresentationCache::new(2);
        cache.insert(EntityKey::item("m1"), &[1.0, 2.0]).unwrap();
        cache.insert(EntityKey::user("u1#0"), &[1.0, 1.0]).unwrap();
        cache.insert(EntityKey::user("u1#1"), &[3.0, 3.0]).unwrap();
        let enc = PrecomputedEncoder::new(cache);
        assert_eq!(enc.encode(&EntityKey::item("m1"), "x").unwrap().tokens(), 1);
        let m = enc.encode(&EntityKey::user("u1"), "x").unwrap();
        assert_eq!(aggregate_rows(&m, Aggregation::Avg), vec![2.0, 2.0]);
        assert!(matches!(
            enc.encode(&EntityKey::item("missing"), "x"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn encode_all_preserves_order() {
        let enc = HashingEncoder::new(4, 0).unwrap();
        let items: Vec<_> = (0..20)
            .map(|i| (EntityKey::item(i.to_string()), format!("token{i} shared")))
            .collect();
        let par = encode_all(&enc, &items, Aggregation::Avg, 4).unwrap();
        let ser = encode_all(&enc, &items, Aggregation::Avg, 1).unwrap();
        assert_eq!(par, ser);
        assert_eq!(par[7].key, items[7].0);
    }
}

//! JSONL knowledge store and the generation driver.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::llm::{LlmClient, Provenance, RetryPolicy};
use super::templates::PromptRequest;
use crate::error::{Error, Result};
use crate::kind::{EntityKey, KnowledgeKind};

/// One generated knowledge text; also the JSONL record layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeText {
    pub entity_id: String,
    pub kind: KnowledgeKind,
    pub prompt_hash: String,
    pub text: String,
    pub provenance: Provenance,
}

impl KnowledgeText {
    pub fn key(&self) -> EntityKey {
        EntityKey::new(&self.entity_id, self.kind)
    }
}

/// Knowledge texts keyed by `(entity_id, kind)`.
///
/// The backing file only grows: a changed prompt hash appends a new line and
/// the later line wins on load. Reads take a shared lock, writes are
/// serialized through the file mutex.
#[derive(Debug)]
pub struct KnowledgeStore {
    records: RwLock<HashMap<EntityKey, KnowledgeText>>,
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl KnowledgeStore {
    pub fn in_memory() -> Self {
        Self {
            records: RwLock::new(HashMap::new()),
            writer: None,
            path: None,
        }
    }

    /// Opens or creates the store at `path`, loading existing records.
    pub fn open(path: &Path) -> Result<Self> {
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: KnowledgeText = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                })?;
                records.insert(rec.key(), rec);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records: RwLock::new(records),
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &EntityKey) -> Option<KnowledgeText> {
        self.records.read().expect("store lock").get(key).cloned()
    }

    /// The stored record for `key` if its prompt hash equals `hash`.
    pub fn lookup(&self, key: &EntityKey, hash: &str) -> Option<KnowledgeText> {
        self.get(key).filter(|r| r.prompt_hash == hash)
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records sorted by kind then entity id.
    pub fn records(&self) -> Vec<KnowledgeText> {
        let mut v: Vec<_> = self.records.read().expect("store lock").values().cloned().collect();
        v.sort_by(|a, b| (a.kind.as_byte(), &a.entity_id).cmp(&(b.kind.as_byte(), &b.entity_id)));
        v
    }

    /// Inserts `rec`. An identical record already present is a no-op and
    /// returns `false`.
    pub fn put(&self, rec: KnowledgeText) -> Result<bool> {
        if rec.text.trim().is_empty() {
            return Err(Error::EmptyKnowledge(rec.key().to_string()));
        }
        // The file lock is held across the map update so that file order and
        // map state agree.
        let mut guard = self.writer.as_ref().map(|w| w.lock().expect("writer lock"));
        let key = rec.key();
        if self.get(&key).as_ref() == Some(&rec) {
            return Ok(false);
        }
        if let Some(w) = guard.as_mut() {
            let path = self.path.as_deref().unwrap_or(Path::new("<store>"));
            let line = serde_json::to_string(&rec).map_err(|e| Error::Store(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        self.records.write().expect("store lock").insert(key, rec);
        Ok(true)
    }

    /// Rewrites the file with exactly one line per key.
    pub fn compact(&self) -> Result<()> {
        let (Some(path), Some(writer)) = (self.path.as_deref(), self.writer.as_ref()) else {
            return Ok(());
        };
        let mut w = writer.lock().expect("writer lock");
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
            for rec in self.records() {
                let line = serde_json::to_string(&rec).map_err(|e| Error::Store(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| Error::io(&tmp, e))?;
            }
            out.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        *w = BufWriter::new(file);
        Ok(())
    }
}

/// Returns the stored knowledge for `req` or asks `llm` for it.
///
/// A stored record with the same prompt hash is returned without calling the
/// client. Otherwise the response is stored, replacing any record produced
/// from a different prompt.
pub fn generate_knowledge(
    req: &PromptRequest,
    llm: &dyn LlmClient,
    policy: &RetryPolicy,
    store: &KnowledgeStore,
) -> Result<KnowledgeText> {
    if req.rendered_text.trim().is_empty() {
        return Err(Error::Contract(format!(
            "empty prompt for {}/{}",
            req.kind, req.entity_id
        )));
    }
    let key = EntityKey::new(&req.entity_id, req.kind);
    let hash = req.prompt_hash();
    if let Some(hit) = store.lookup(&key, &hash) {
        return Ok(hit);
    }
    let text = policy
        .run(llm, &req.rendered_text)
        .map_err(|(e, attempts)| Error::Generation {
            attempts,
            message: format!("{key}: {e}"),
        })?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(Error::EmptyKnowledge(key.to_string()));
    }
    let rec = KnowledgeText {
        entity_id: req.entity_id.clone(),
        kind: req.kind,
        prompt_hash: hash,
        text,
        provenance: llm.provenance(),
    };
    store.put(rec.clone())?;
    Ok(rec)
}

/// Runs [`generate_knowledge`] over `reqs` with at most `workers` concurrent
/// calls. Results keep the input order.
pub fn generate_all(
    reqs: &[PromptRequest],
    llm: &dyn LlmClient,
    policy: &RetryPolicy,
    store: &KnowledgeStore,
    workers: usize,
) -> Vec<Result<KnowledgeText>> {
    let workers = workers.clamp(1, reqs.len().max(1));
    if workers == 1 {
        return reqs
            .iter()
            .map(|r| generate_knowledge(r, llm, policy, store))
            .collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<KnowledgeText>>>> = reqs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(req) = reqs.get(i) else { break };
                let out = generate_knowledge(req, llm, policy, store);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::llm::{LlmError, StubLlm};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: StubLlm,
        calls: AtomicUsize,
    }

    impl LlmClient for Counting {
        fn complete(&self, p: &str) -> std::result::Result<String, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(p)
        }
        fn provenance(&self) -> Provenance {
            Provenance::Stub
        }
    }

    struct Empty;
    impl LlmClient for Empty {
        fn complete(&self, _: &str) -> std::result::Result<String, LlmError> {
            Ok("   ".into())
        }
        fn provenance(&self) -> Provenance {
            Provenance::Stub
        }
    }

    fn req(id: &str, text: &str) -> PromptRequest {
        PromptRequest {
            kind: KnowledgeKind::Preference,
            entity_id: id.into(),
            rendered_text: text.into(),
        }
    }

    fn counting() -> Counting {
        Counting {
            inner: StubLlm::new(vec!["genre".into(), "mood".into()], 3),
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn cache_hit_skips_the_client() {
        let llm = counting();
        let store = KnowledgeStore::in_memory();
        let p = RetryPolicy::no_delay(1);
        let a = generate_knowledge(&req("1", "genre and mood"), &llm, &p, &store).unwrap();
        let b = generate_knowledge(&req("1", "genre and mood"), &llm, &p, &store).unwrap();
        assert_eq!(a, b);
        assert_eq!(llm.calls.load(Ordering::SeqCst), 1);
        assert!(a.text.contains("genre") && a.text.contains("mood"));
        assert_eq!(a.provenance, Provenance::Stub);
    }

    #[test]
    fn empty_response_is_an_error() {
        let store = KnowledgeStore::in_memory();
        let err = generate_knowledge(&req("1", "x"), &Empty, &RetryPolicy::no_delay(1), &store).unwrap_err();
        assert!(matches!(err, Error::EmptyKnowledge(_)));
        assert!(store.is_empty());
    }

    #[test]
    fn file_store_keeps_one_record_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.jsonl");
        let llm = counting();
        let p = RetryPolicy::no_delay(1);
        {
            let store = KnowledgeStore::open(&path).unwrap();
            generate_knowledge(&req("1", "genre v1"), &llm, &p, &store).unwrap();
            generate_knowledge(&req("1", "genre v1"), &llm, &p, &store).unwrap();
            generate_knowledge(&req("2", "mood"), &llm, &p, &store).unwrap();
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        {
            let store = KnowledgeStore::open(&path).unwrap();
            assert_eq!(store.len(), 2);
            // Prompt changed: overwrite by appending.
            generate_knowledge(&req("1", "genre v2"), &llm, &p, &store).unwrap();
            assert_eq!(store.len(), 2);
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        let store = KnowledgeStore::open(&path).unwrap();
        let key = EntityKey::new("1", KnowledgeKind::Preference);
        assert_eq!(store.get(&key).unwrap().prompt_hash, req("1", "genre v2").prompt_hash());
        store.compact().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(KnowledgeStore::open(&path).unwrap().records(), store.records());
    }

    #[test]
    fn record_has_documented_keys() {
        let rec = KnowledgeText {
            entity_id: "7".into(),
            kind: KnowledgeKind::ItemFactual,
            prompt_hash: "ab".into(),
            text: "t".into(),
            provenance: Provenance::LiveLlm,
        };
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["entity_id", "kind", "prompt_hash", "provenance", "text"]);
        assert_eq!(v["kind"], "item_factual");
        assert_eq!(v["provenance"], "live_llm");
    }

    #[test]
    fn parallel_generation_preserves_order() {
        let llm = counting();
        let store = KnowledgeStore::in_memory();
        let reqs: Vec<_> = (0..20).map(|i| req(&i.to_string(), &format!("genre {i}"))).collect();
        let out = generate_all(&reqs, &llm, &RetryPolicy::no_delay(1), &store, 4);
        for (r, o) in reqs.iter().zip(&out) {
            assert_eq!(o.as_ref().unwrap().entity_id, r.entity_id);
        }
        assert_eq!(store.len(), 20);
    }
}

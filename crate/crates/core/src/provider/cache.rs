use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerationRequest, Provider, ProviderError, RequestTag};

/// SHA-256 over a length-prefixed encoding of
/// (provider id, model id, prompt, temperature, max_tokens).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(provider_id: &str, model: &str, req: &GenerationRequest) -> Self {
        let mut h = Sha256::new();
        h.update(b"cleaneval-cache-v1");
        for part in [provider_id, model, req.prompt.as_str()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        // -0.0 and 0.0 must agree
        let temperature = if req.temperature == 0.0 {
            0.0f64
        } else {
            req.temperature
        };
        h.update(temperature.to_bits().to_le_bytes());
        h.update(u64::from(req.max_tokens).to_le_bytes());
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// On-disk cache record: request metadata plus the response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: RequestTag,
    pub response: String,
}

/// Directory of `<digest>.json` files. Append-only: an existing key is never
/// rewritten. Writes go through a temp file and a rename so readers never see
/// a partial entry.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| ProviderError::Cache(format!("create {}: {e}", dir.display())))?;
        Ok(ResponseCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, ProviderError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| {
                ProviderError::Cache(format!("corrupt entry {}: {e}", path.display()))
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ProviderError::Cache(format!(
                "read {}: {e}",
                path.display()
            ))),
        }
    }

    /// Stores `entry` unless the key already exists; returns the entry that is
    /// in the cache afterwards.
    pub fn put(&self, key: &CacheKey, entry: CacheEntry) -> Result<CacheEntry, ProviderError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = self.get(key)? {
            return Ok(existing);
        }
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let cache_err =
            |e: std::io::Error| ProviderError::Cache(format!("write {}: {e}", path.display()));
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        let mut f = fs::File::create(&tmp).map_err(cache_err)?;
        f.write_all(&bytes).map_err(cache_err)?;
        f.sync_all().map_err(cache_err)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(cache_err)?;
        Ok(entry)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Serves completions from a [`ResponseCache`], falling through to `inner`
/// on a miss and recording the response before returning it.
pub struct CachedProvider<P> {
    inner: P,
    cache: ResponseCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<P: Provider> CachedProvider<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        CachedProvider {
            inner,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

impl<P: Provider> Provider for CachedProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let key = CacheKey::compute(self.inner.id(), self.inner.model(), req);
        if let Some(hit) = self.cache.get(&key)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.response);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.generate(req)?;
        if response.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        let stored = self.cache.put(
            &key,
            CacheEntry {
                provider: self.inner.id().to_string(),
                model: self.inner.model().to_string(),
                prompt: req.prompt.clone(),
                temperature: req.temperature,
                max_tokens: req.max_tokens,
                tag: req.tag,
                response,
            },
        )?;
        Ok(stored.response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockProvider;

    fn req(prompt: &str) -> GenerationRequest {
        GenerationRequest::new(prompt, RequestTag::Evaluate)
    }

    #[test]
    fn key_is_deterministic_and_parameter_sensitive() {
        let a = CacheKey::compute("mock", "m", &req("hello"));
        assert_eq!(a, CacheKey::compute("mock", "m", &req("hello")));
        assert_eq!(a.as_str().len(), 64);
        assert_ne!(
            a,
            CacheKey::compute("mock", "m", &req("hello").with_temperature(0.5))
        );
        assert_ne!(
            a,
            CacheKey::compute("mock", "m", &req("hello").with_max_tokens(7))
        );
        assert_ne!(a, CacheKey::compute("remote", "m", &req("hello")));
        assert_ne!(a, CacheKey::compute("mock", "m2", &req("hello")));
        // length prefixing keeps field boundaries distinct
        assert_ne!(
            CacheKey::compute("ab", "c", &req("x")),
            CacheKey::compute("a", "bc", &req("x"))
        );
    }

    #[test]
    fn one_character_changes_give_distinct_keys() {
        let base = "The quick brown fox jumps over the lazy dog.";
        let mut keys = std::collections::HashSet::new();
        keys.insert(CacheKey::compute("mock", "m", &req(base)));
        for (i, _) in base.char_indices() {
            let mut variant = base.to_string();
            variant.replace_range(i..i + 1, "#");
            keys.insert(CacheKey::compute("mock", "m", &req(&variant)));
        }
        let variants = base.chars().filter(|c| *c != '#').count();
        assert_eq!(keys.len(), variants + 1);
    }

    #[test]
    fn second_call_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::from_table([("P", "out")]);
        let cached = CachedProvider::new(mock, ResponseCache::open(dir.path()).unwrap());
        let first = cached.generate(&req("P")).unwrap();
        let second = cached.generate(&req("P")).unwrap();
        assert_eq!(first, "out");
        assert_eq!(first, second);
        assert_eq!(cached.stats(), CacheStats { hits: 1, misses: 1 });
        assert_eq!(cached.inner().calls(), 1);
        assert_eq!(cached.cache().len(), 1);
    }

    #[test]
    fn put_never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::compute("mock", "m", &req("P"));
        let entry = |text: &str| CacheEntry {
            provider: "mock".into(),
            model: "m".into(),
            prompt: "P".into(),
            temperature: 0.0,
            max_tokens: 1,
            tag: RequestTag::Evaluate,
            response: text.into(),
        };
        cache.put(&key, entry("first")).unwrap();
        let kept = cache.put(&key, entry("second")).unwrap();
        assert_eq!(kept.response, "first");
        assert_eq!(cache.get(&key).unwrap().unwrap().response, "first");
    }

    #[test]
    fn warm_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = CachedProvider::new(
                MockProvider::from_table([("P", "out")]),
                ResponseCache::open(dir.path()).unwrap(),
            );
            c.generate(&req("P")).unwrap();
        }
        // an empty table would refuse, so any answer must come from disk
        let c = CachedProvider::new(
            MockProvider::from_table::<_, &str>([]),
            ResponseCache::open(dir.path()).unwrap(),
        );
        assert_eq!(c.generate(&req("P")).unwrap(), "out");
        assert_eq!(c.inner().calls(), 0);
    }

    #[test]
    fn empty_completions_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let c = CachedProvider::new(
            MockProvider::from_table([("P", "   ")]),
            ResponseCache::open(dir.path()).unwrap(),
        );
        assert!(matches!(
            c.generate(&req("P")),
            Err(ProviderError::EmptyCompletion)
        ));
        assert!(c.cache().is_empty());
    }
}

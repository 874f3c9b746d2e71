//! Access to the black-box target model and to embedding models.
//!
//! A [`Gateway`] wraps one [`CompletionBackend`] and one [`Embedder`] with
//! the on-disk response cache and a bounded worker pool. Callers issue
//! requests through a [`Session`], which counts the logical requests made
//! on its behalf.

mod cache;
mod embed;
mod live;
mod mock;
mod synthetic;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, ResponseCache};
pub use embed::{HashEmbedder, HASH_EMBED_DIM, HASH_EMBED_MODEL};
pub use live::{LiveBackend, RetryPolicy, API_KEY_ENV};
pub use mock::{Fallback, MatchPattern, MockScript, ScriptEntry, ScriptedMock};
pub use synthetic::{SyntheticProfile, SyntheticTarget};

use crate::error::{Error, Result};
use crate::text_metrics::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_id: "gpt-3.5-turbo".to_string(),
            temperature: 1.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// The responses obtained by sampling one prompt `n` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub prompt_text: String,
    pub answers: Vec<String>,
    pub params: GenerationParams,
}

impl AnswerSet {
    /// An answer set observed without access to the prompt that produced it.
    pub fn observed(answers: Vec<String>, params: GenerationParams) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::Precondition("answer set is empty".into()));
        }
        Ok(AnswerSet {
            prompt_text: String::new(),
            answers,
            params,
        })
    }

    pub fn n(&self) -> usize {
        self.answers.len()
    }
}

/// One completion request: the prompt, decoding parameters and which sample
/// of that prompt is wanted.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a GenerationParams,
    pub sample_index: u32,
}

pub trait CompletionBackend: Send + Sync {
    /// Stable identifier that takes part in cache keys.
    fn backend_id(&self) -> String;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String>;
}

pub trait Embedder: Send + Sync {
    fn backend_id(&self) -> String;

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector>;
}

/// Counters over the lifetime of a gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    /// Completion requests received, cached or not.
    pub requests: u64,
    /// Completion requests forwarded to the backend.
    pub backend_calls: u64,
    pub embed_requests: u64,
    pub embed_backend_calls: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    backend_calls: AtomicU64,
    embed_requests: AtomicU64,
    embed_backend_calls: AtomicU64,
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn Embedder>,
    cache: Option<ResponseCache>,
    pool: rayon::ThreadPool,
    parallelism: usize,
    counters: Counters,
    /// One lock per cache key with a backend call in flight, so parallel
    /// misses on the same key reach the backend once.
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.backend_id())
            .field("embedder", &self.embedder.backend_id())
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

pub struct GatewayBuilder {
    backend: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn Embedder>,
    cache: Option<ResponseCache>,
    parallelism: usize,
}

impl GatewayBuilder {
    pub fn embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn build(self) -> Result<Gateway> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .thread_name(|i| format!("gateway-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Gateway {
            backend: self.backend,
            embedder: self.embedder,
            cache: self.cache,
            pool,
            parallelism: self.parallelism,
            counters: Counters::default(),
            inflight: Mutex::new(HashMap::new()),
        })
    }
}

impl Gateway {
    pub fn builder(backend: Arc<dyn CompletionBackend>) -> GatewayBuilder {
        GatewayBuilder {
            backend,
            embedder: Arc::new(HashEmbedder),
            cache: None,
            parallelism: 1,
        }
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::SeqCst),
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
            embed_requests: self.counters.embed_requests.load(Ordering::SeqCst),
            embed_backend_calls: self.counters.embed_backend_calls.load(Ordering::SeqCst),
        }
    }

    pub fn session(&self) -> Session<'_> {
        Session {
            gateway: self,
            requests: AtomicU64::new(0),
        }
    }

    /// One completion, served from the cache when possible.
    pub fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<String> {
        self.counters.requests.fetch_add(1, Ordering::SeqCst);
        let call = || {
            self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
            self.backend.complete(&CompletionRequest {
                prompt,
                params,
                sample_index,
            })
        };
        let Some(cache) = &self.cache else {
            return call();
        };
        let key =
            CacheKey::for_completion(&self.backend.backend_id(), prompt, params, sample_index);
        self.single_flight(&key, || cache.get(&key), call, |text| cache.put(&key, text))
    }

    /// Cache lookup, then at most one backend call per key at a time; a
    /// caller that waited on the key lock re-reads the cache first.
    fn single_flight<T>(
        &self,
        key: &CacheKey,
        get: impl Fn() -> Result<Option<T>>,
        call: impl FnOnce() -> Result<T>,
        put: impl FnOnce(&T) -> Result<()>,
    ) -> Result<T> {
        if let Some(hit) = get()? {
            return Ok(hit);
        }
        let digest = key.digest().to_string();
        let lock = self
            .inflight
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(digest.clone())
            .or_default()
            .clone();
        let result = {
            let _held = lock.lock().unwrap_or_else(|e| e.into_inner());
            match get() {
                Ok(Some(hit)) => Ok(hit),
                Ok(None) => call().and_then(|value| put(&value).map(|_| value)),
                Err(e) => Err(e),
            }
        };
        let mut map = self.inflight.lock().unwrap_or_else(|e| e.into_inner());
        // Clones are only taken under the map lock, so a count of two
        // (map and ours) means nobody else is waiting.
        if Arc::strong_count(&lock) == 2 {
            map.remove(&digest);
        }
        result
    }

    /// Samples `prompt` `n` times; `answers[i]` is sample index `i`.
    pub fn generate(&self, prompt: &str, params: &GenerationParams, n: usize) -> Result<AnswerSet> {
        if n == 0 {
            return Err(Error::Precondition("n must be positive".into()));
        }
        let indices: Vec<u32> = (0..n as u32).collect();
        let answers = self
            .par_map(&indices, |_, &i| self.complete(prompt, params, i))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(AnswerSet {
            prompt_text: prompt.to_string(),
            answers,
            params: params.clone(),
        })
    }

    pub fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Precondition("cannot embed empty text".into()));
        }
        self.counters.embed_requests.fetch_add(1, Ordering::SeqCst);
        let call = || {
            self.counters
                .embed_backend_calls
                .fetch_add(1, Ordering::SeqCst);
            self.embedder.embed(text, model_id)
        };
        let Some(cache) = &self.cache else {
            return call();
        };
        let key = CacheKey::for_embedding(&self.embedder.backend_id(), model_id, text);
        self.single_flight(
            &key,
            || cache.get_embedding(&key),
            call,
            |vector| cache.put_embedding(&key, vector),
        )
    }

    /// Maps `f` over `items` on the gateway's worker pool; output order
    /// matches input order.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        if self.parallelism == 1 || items.len() < 2 {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        self.pool
            .install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

/// A view of the gateway that counts the requests issued through it.
pub struct Session<'g> {
    gateway: &'g Gateway,
    requests: AtomicU64,
}

impl<'g> Session<'g> {
    pub fn gateway(&self) -> &'g Gateway {
        self.gateway
    }

    /// Completion requests issued through this session, cache hits included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<String> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.gateway.complete(prompt, params, sample_index)
    }

    pub fn generate(&self, prompt: &str, params: &GenerationParams, n: usize) -> Result<AnswerSet> {
        let set = self.gateway.generate(prompt, params, n)?;
        self.requests.fetch_add(n as u64, Ordering::SeqCst);
        Ok(set)
    }

    pub fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector> {
        self.gateway.embed(text, model_id)
    }

    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.gateway.par_map(items, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_gateway(cache: Option<ResponseCache>) -> (Arc<ScriptedMock>, Gateway) {
        let mock = Arc::new(ScriptedMock::strict());
        mock.register(
            MatchPattern::Exact("P".into()),
            vec!["a1".into(), "a2".into(), "a3".into()],
        )
        .unwrap();
        let mut builder = Gateway::builder(mock.clone()).parallelism(3);
        if let Some(c) = cache {
            builder = builder.cache(c);
        }
        (mock, builder.build().unwrap())
    }

    struct Slow(AtomicU64);

    impl CompletionBackend for Slow {
        fn backend_id(&self) -> String {
            "slow".into()
        }

        fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(30));
            Ok(request.prompt.to_uppercase())
        }
    }

    #[test]
    fn parallel_misses_on_one_key_call_backend_once() {
        let dir = tempfile::tempdir().unwrap();
        let slow = Arc::new(Slow(AtomicU64::new(0)));
        let gw = Gateway::builder(slow.clone())
            .cache(ResponseCache::open(dir.path()).unwrap())
            .parallelism(8)
            .build()
            .unwrap();
        let prompts = ["same"; 16];
        let p = GenerationParams::default();
        let out = gw.par_map(&prompts, |_, q| gw.complete(q, &p, 0).unwrap());
        assert!(out.iter().all(|o| o == "SAME"));
        assert_eq!(slow.0.load(Ordering::SeqCst), 1);
        assert_eq!(gw.stats().backend_calls, 1);
        assert_eq!(gw.stats().requests, 16);
        assert!(gw.inflight.lock().unwrap().is_empty());
    }

    #[test]
    fn generate_returns_scripted_answers_in_order() {
        let (_, gw) = mock_gateway(None);
        let set = gw.generate("P", &GenerationParams::default(), 3).unwrap();
        assert_eq!(set.answers, vec!["a1", "a2", "a3"]);
        assert_eq!(set.prompt_text, "P");
        assert!(gw.generate("P", &GenerationParams::default(), 0).is_err());
    }

    #[test]
    fn cached_second_call_hits_no_backend() {
        let dir = tempfile::tempdir().unwrap();
        let (mock, gw) = mock_gateway(Some(ResponseCache::open(dir.path()).unwrap()));
        let p = GenerationParams::default();
        let first = gw.generate("P", &p, 3).unwrap();
        assert_eq!(mock.calls(), 3);
        let second = gw.generate("P", &p, 3).unwrap();
        assert_eq!(mock.calls(), 3);
        assert_eq!(first, second);
        let stats = gw.stats();
        assert_eq!((stats.requests, stats.backend_calls), (6, 3));
    }

    #[test]
    fn unscripted_prompt_propagates() {
        let (_, gw) = mock_gateway(None);
        let err = gw
            .generate("Z", &GenerationParams::default(), 1)
            .unwrap_err();
        assert!(matches!(err, Error::UnscriptedPrompt(_)));
    }

    #[test]
    fn embedding_is_cached_and_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (_, gw) = mock_gateway(Some(ResponseCache::open(dir.path()).unwrap()));
        let a = gw.embed("abc", HASH_EMBED_MODEL).unwrap();
        let b = gw.embed("abc", HASH_EMBED_MODEL).unwrap();
        assert_eq!(a, b);
        assert_eq!(gw.stats().embed_backend_calls, 1);
        assert!(matches!(
            gw.embed("", HASH_EMBED_MODEL),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn session_counts_its_own_requests() {
        let (_, gw) = mock_gateway(None);
        let s1 = gw.session();
        let s2 = gw.session();
        s1.generate("P", &GenerationParams::default(), 2).unwrap();
        s2.complete("P", &GenerationParams::default(), 0).unwrap();
        assert_eq!((s1.requests(), s2.requests()), (2, 1));
    }

    #[test]
    fn par_map_preserves_order() {
        let (_, gw) = mock_gateway(None);
        let items: Vec<usize> = (0..64).collect();
        assert_eq!(
            gw.par_map(&items, |i, x| i * 100 + x),
            (0..64).map(|i| i * 101).collect::<Vec<_>>()
        );
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        let bad = GenerationParams {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Text embeddings: the provider contract, cosine similarity, an offline
//! hash embedder, an HTTP client, and a per-run cache.

use std::collections::HashMap;
use std::sync::RwLock;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::EmbeddingConfig;
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("invalid embedding input: {0}")]
    InvalidInput(String),
    #[error("malformed embedding response: {0}")]
    Response(String),
}

/// A dense real vector produced by an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidInput("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Arithmetic mean of equal-dimension vectors.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Embedding>) -> Option<Embedding> {
        let mut iter = items.into_iter();
        let first = iter.next()?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for e in iter {
            debug_assert_eq!(e.dim(), acc.len());
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
            n += 1;
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        Some(Embedding(acc))
    }
}

/// Cosine similarity, clamped into [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A sentence encoder. Implementations must return the same vector for the
/// same text within one run and be callable from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn model(&self) -> &str;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        (**self).embed(texts)
    }
}

/// Validated batch embedding: non-empty input, one equal-dimension vector per text.
pub fn embed_batch<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[String],
) -> Result<Vec<Embedding>, EmbeddingError> {
    if texts.is_empty() {
        return Err(EmbeddingError::InvalidInput("empty batch".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::InvalidInput(format!("text {i} is empty")));
    }
    let out = provider.embed(texts)?;
    if out.len() != texts.len() {
        return Err(EmbeddingError::Response(format!(
            "{} vectors for {} texts",
            out.len(),
            texts.len()
        )));
    }
    check_uniform_dim(&out, None)?;
    Ok(out)
}

fn check_uniform_dim(
    vectors: &[Embedding],
    expected: Option<usize>,
) -> Result<usize, EmbeddingError> {
    let expected = expected
        .or_else(|| vectors.first().map(Embedding::dim))
        .unwrap_or(0);
    for v in vectors {
        if v.dim() != expected {
            return Err(EmbeddingError::DimensionMismatch {
                expected,
                got: v.dim(),
            });
        }
    }
    Ok(expected)
}

/// Offline embedder: token unigrams hashed into buckets, L2-normalized.
///
/// Text is lowercased with URLs and mentions stripped before hashing.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket a single token hashes into.
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(head) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let mut tokens = text::tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.trim().to_lowercase());
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[self.bucket(t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        Embedding(v)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn model(&self) -> &str {
        "hash"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

/// Client for an OpenAI-compatible `/v1/embeddings` endpoint.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
    max_retries: u32,
    backoff: Duration,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &EmbeddingConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            agent,
            url: format!("{}/v1/embeddings", cfg.base_url.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok(),
            batch_size: cfg.batch_size.max(1),
            max_retries: cfg.max_retries.max(1),
            backoff: Duration::from_millis(200),
        }
    }

    fn post_once(&self, batch: &[String]) -> Result<Vec<Embedding>, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest {
                model: &self.model,
                input: batch,
            })
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("HTTP {status}: {body}"));
        }
        let parsed: EmbeddingResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| Embedding::new(d.embedding).map_err(|e| e.to_string()))
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let mut attempt = 0;
            let vectors = loop {
                attempt += 1;
                match self.post_once(batch) {
                    Ok(v) if v.len() == batch.len() => break v,
                    Ok(v) => {
                        return Err(EmbeddingError::Response(format!(
                            "{} vectors for {} texts",
                            v.len(),
                            batch.len()
                        )))
                    }
                    Err(message) if attempt >= self.max_retries => {
                        return Err(EmbeddingError::Transport {
                            attempts: attempt,
                            message,
                        })
                    }
                    Err(message) => {
                        log::warn!("embedding attempt {attempt} failed: {message}");
                        thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                    }
                }
            };
            out.extend(vectors);
        }
        check_uniform_dim(&out, None)?;
        Ok(out)
    }
}

/// Memoizes vectors by exact text and pins the run's dimension.
pub struct CachedEmbedder<P> {
    inner: P,
    cache: RwLock<HashMap<String, Embedding>>,
    dim: RwLock<Option<usize>>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            dim: RwLock::new(None),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.read().expect("cache lock");
            for t in texts {
                if !cache.contains_key(t) && !missing.contains(t) {
                    missing.push(t.clone());
                }
            }
        }
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let pinned = *self.dim.read().expect("dim lock");
            let dim = check_uniform_dim(&fresh, pinned)?;
            *self.dim.write().expect("dim lock") = Some(dim);
            let mut cache = self.cache.write().expect("cache lock");
            for (t, e) in missing.into_iter().zip(fresh) {
                cache.insert(t, e);
            }
        }
        let cache = self.cache.read().expect("cache lock");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&e(&[3.0, 4.0]), &e(&[3.0, 4.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&e(&[1.0, 0.0]), &e(&[0.6, 0.8])).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroNorm)
        );
        assert!(matches!(
            cosine(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert_eq!(
            Embedding::new(vec![f64::NAN]),
            Err(EmbeddingError::NonFinite)
        );
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 5),
            b in proptest::collection::vec(-10.0f64..10.0, 5),
        ) {
            let (a, b) = (e(&a), e(&b));
            prop_assume!(a.norm() > 1e-9 && b.norm() > 1e-9);
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn hash_embedder_unit_norm(text in "[a-z ]{1,40}[a-z]") {
            let v = HashEmbedder::default().embed_one(&text);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hash_embedder_determinism_and_order() {
        let h = HashEmbedder::default();
        let texts = vec![
            "a".to_string(),
            "cyclone nilam".to_string(),
            "a".to_string(),
        ];
        let out = embed_batch(&h, &texts).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_eq!(out[1], h.embed_one("cyclone nilam"));
        assert_eq!(out[0].dim(), 256);
    }

    #[test]
    fn hash_embedder_disjoint_buckets_are_orthogonal() {
        let h = HashEmbedder::default();
        let (a, b) = ("storm", "election");
        assert_ne!(h.bucket(a), h.bucket(b));
        assert_eq!(cosine(&h.embed_one(a), &h.embed_one(b)).unwrap(), 0.0);
        // Case, URLs, and mentions do not change the vector.
        assert_eq!(h.embed_one("Storm http://x.co @bob"), h.embed_one("storm"));
    }

    #[test]
    fn embed_batch_rejects_empty_input() {
        let h = HashEmbedder::default();
        assert!(embed_batch(&h, &[]).is_err());
        assert!(embed_batch(&h, &["ok".into(), "  ".into()]).is_err());
    }

    struct Counting {
        calls: AtomicUsize,
        dim: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn model(&self) -> &str {
            "counting"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
            self.calls.fetch_add(texts.len(), Ordering::SeqCst);
            let d = self.dim.load(Ordering::SeqCst);
            Ok(texts.iter().map(|_| Embedding(vec![1.0; d])).collect())
        }
    }

    #[test]
    fn cache_dedupes_and_pins_dimension() {
        let cached = CachedEmbedder::new(Counting {
            calls: AtomicUsize::new(0),
            dim: AtomicUsize::new(3),
        });
        let texts: Vec<String> = ["x", "y", "x"].iter().map(|s| s.to_string()).collect();
        cached.embed(&texts).unwrap();
        cached.embed(&texts).unwrap();
        assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 2);
        assert_eq!(cached.cached_len(), 2);
        cached.inner().dim.store(4, Ordering::SeqCst);
        assert!(matches!(
            cached.embed(&["z".to_string()]),
            Err(EmbeddingError::DimensionMismatch {
                expected: 3,
                got: 4
            })
        ));
    }
}

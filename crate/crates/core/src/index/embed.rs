//! Embedding clients.
//!
//! The embedding model runs out-of-process (an HTTP service); in-process we
//! only fetch vectors. [`EmbedClient`] abstracts the source so tests and
//! offline runs can use the deterministic [`HashEmbedder`] or an explicit
//! [`MapEmbedder`] instead of the network, and [`CachedEmbedder`] memoizes
//! repeated query texts.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::IndexError;
use crate::gateway::record_net_request;

/// Source of text embeddings. Batch-oriented: one call may embed many texts.
pub trait EmbedClient: Send + Sync {
    /// Returns one vector per input text, in order. Empty texts are errors.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError>;
}

impl<C: EmbedClient + ?Sized> EmbedClient for &C {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        (**self).embed(texts)
    }
}

impl<C: EmbedClient + ?Sized> EmbedClient for std::sync::Arc<C> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        (**self).embed(texts)
    }
}

/// Convenience for the single-text case.
pub fn embed_one(client: &dyn EmbedClient, text: &str) -> Result<Vec<f32>, IndexError> {
    let mut vectors = client.embed(&[text])?;
    Ok(vectors.remove(0))
}

fn reject_empty(texts: &[&str]) -> Result<(), IndexError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(IndexError::EmptyText);
    }
    Ok(())
}

/// Deterministic pseudo-embedder: vectors are derived from the SHA-256 of
/// the text, so fixtures need no model and are identical on every platform.
/// Components are uniform-ish in `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while out.len() < self.dim {
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            hasher.update([0u8]);
            hasher.update(block.to_le_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if out.len() == self.dim {
                    break;
                }
                let u = u32::from_le_bytes(chunk.try_into().unwrap());
                out.push((u as f64 / u32::MAX as f64 * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        out
    }
}

impl EmbedClient for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        reject_empty(texts)?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Fixed text -> vector table; unknown text is an error. For tests that need
/// full control over retrieval geometry.
#[derive(Debug, Default, Clone)]
pub struct MapEmbedder {
    map: HashMap<String, Vec<f32>>,
}

impl MapEmbedder {
    pub fn new() -> Self {
        MapEmbedder::default()
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f32>) -> &mut Self {
        self.map.insert(text.into(), vector);
        self
    }
}

impl EmbedClient for MapEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        reject_empty(texts)?;
        texts
            .iter()
            .map(|t| {
                self.map
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| IndexError::UnknownText(t.to_string()))
            })
            .collect()
    }
}

/// Memoizing wrapper: repeated texts hit the cache instead of the inner
/// client, and a batch only forwards its cache misses.
pub struct CachedEmbedder<C: EmbedClient> {
    inner: C,
    cache: Mutex<HashMap<String, Vec<f32>>>,
}

impl<C: EmbedClient> CachedEmbedder<C> {
    pub fn new(inner: C) -> Self {
        CachedEmbedder { inner, cache: Mutex::new(HashMap::new()) }
    }

    /// Preloads known embeddings (e.g. from a precomputed query file).
    pub fn preload(&self, entries: impl IntoIterator<Item = (String, Vec<f32>)>) {
        self.cache.lock().unwrap().extend(entries);
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<C: EmbedClient> EmbedClient for CachedEmbedder<C> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        reject_empty(texts)?;
        let mut misses: Vec<&str> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            for t in texts {
                if !cache.contains_key(*t) && !misses.contains(t) {
                    misses.push(t);
                }
            }
        }
        if !misses.is_empty() {
            let fetched = self.inner.embed(&misses)?;
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in misses.iter().zip(fetched) {
                cache.insert(t.to_string(), v);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}

/// Client for an HTTP embedding service speaking
/// `POST {"texts": [...]} -> {"vectors": [[...], ...]}`.
pub struct HttpEmbedClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    max_attempts: u32,
    initial_backoff: Duration,
}

#[derive(serde::Serialize)]
struct EmbedWireRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(serde::Deserialize)]
struct EmbedWireReply {
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbedClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, IndexError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()?;
        Ok(HttpEmbedClient {
            endpoint: endpoint.into(),
            client,
            max_attempts: 4,
            initial_backoff: Duration::from_millis(250),
        })
    }

    pub fn with_retries(mut self, max_attempts: u32, initial_backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.initial_backoff = initial_backoff;
        self
    }

    fn attempt(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        record_net_request();
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedWireRequest { texts })
            .send()?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(IndexError::HttpStatus { status: status.as_u16(), body });
        }
        let reply: EmbedWireReply =
            resp.json().map_err(|e| IndexError::MalformedReply(e.to_string()))?;
        if reply.vectors.len() != texts.len() {
            return Err(IndexError::MalformedReply(format!(
                "{} texts sent but {} vectors returned",
                texts.len(),
                reply.vectors.len()
            )));
        }
        Ok(reply.vectors)
    }
}

impl EmbedClient for HttpEmbedClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
        reject_empty(texts)?;
        let mut backoff = self.initial_backoff;
        let mut last: Option<IndexError> = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(texts) {
                Ok(v) => return Ok(v),
                Err(e @ (IndexError::Transport(_) | IndexError::HttpStatus { status: 429, .. })) => {
                    last = Some(e);
                }
                Err(e @ IndexError::HttpStatus { status: 500.., .. }) => {
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(IndexError::Exhausted {
            attempts: self.max_attempts,
            last: last.map(|e| e.to_string()).unwrap_or_else(|| "unknown".to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<C: EmbedClient> {
        inner: C,
        calls: AtomicUsize,
        texts_seen: AtomicUsize,
    }

    impl<C: EmbedClient> Counting<C> {
        fn new(inner: C) -> Self {
            Counting { inner, calls: AtomicUsize::new(0), texts_seen: AtomicUsize::new(0) }
        }
    }

    impl<C: EmbedClient> EmbedClient for Counting<C> {
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, IndexError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts_seen.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    #[test]
    fn hash_embedder_is_deterministic_and_dim_exact() {
        let e = HashEmbedder::new(13);
        let a = embed_one(&e, "hello world").unwrap();
        let b = embed_one(&e, "hello world").unwrap();
        let c = embed_one(&e, "hello worlds").unwrap();
        assert_eq!(a.len(), 13);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_text_is_an_error_everywhere() {
        let hash = HashEmbedder::new(4);
        assert!(matches!(hash.embed(&[""]).unwrap_err(), IndexError::EmptyText));
        assert!(matches!(hash.embed(&["ok", "  "]).unwrap_err(), IndexError::EmptyText));
        let map = MapEmbedder::new();
        assert!(matches!(map.embed(&[" "]).unwrap_err(), IndexError::EmptyText));
    }

    #[test]
    fn map_embedder_returns_registered_vectors_only() {
        let mut m = MapEmbedder::new();
        m.insert("q", vec![1.0, 2.0]);
        assert_eq!(embed_one(&m, "q").unwrap(), vec![1.0, 2.0]);
        assert!(matches!(m.embed(&["other"]).unwrap_err(), IndexError::UnknownText(_)));
    }

    #[test]
    fn cache_hit_skips_inner_client() {
        let counting = Counting::new(HashEmbedder::new(4));
        let cached = CachedEmbedder::new(&counting);
        let first = embed_one(&cached, "query A").unwrap();
        let second = embed_one(&cached, "query A").unwrap();
        assert_eq!(first, second);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
        // A mixed batch forwards only the miss.
        cached.embed(&["query A", "query B"]).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 2);
        assert_eq!(counting.texts_seen.load(Ordering::SeqCst), 2);
        assert_eq!(cached.cached_len(), 2);
    }

    #[test]
    fn preloaded_cache_needs_no_network() {
        let map = MapEmbedder::new(); // would error on any fetch
        let cached = CachedEmbedder::new(&map);
        cached.preload([("warm".to_string(), vec![0.5, 0.5])]);
        assert_eq!(embed_one(&cached, "warm").unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn http_client_round_trip_and_error() {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let t = line.trim().to_ascii_lowercase();
                if let Some(v) = t.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if line.trim().is_empty() {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            assert_eq!(req["texts"][0], "hello");
            let reply = r#"{"vectors":[[0.25,-0.5]]}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });
        let client = HttpEmbedClient::new(format!("http://{addr}/embed")).unwrap();
        let before = crate::gateway::net_request_count();
        let v = client.embed(&["hello"]).unwrap();
        assert_eq!(v, vec![vec![0.25, -0.5]]);
        assert_eq!(crate::gateway::net_request_count(), before + 1);
        server.join().unwrap();
    }
}

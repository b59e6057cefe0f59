use std::env;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{AssetError, EmbeddingVector};

/// Maps text and thumbnails into one embedding space.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AssetError>;
    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, AssetError>;
}

/// Deterministic stand-in: signed feature hashing of lowercase word tokens.
/// Thumbnails that are UTF-8 text (captions) are embedded as text, so a test
/// library can use caption files as thumbnails; other bytes hash 4-grams.
#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn fnv1a(bytes: &[u8]) -> u64 {
        bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
    }

    fn accumulate<'a>(&self, features: impl Iterator<Item = &'a [u8]>) -> Vec<f32> {
        let mut out = vec![0.0f32; self.dim];
        for feature in features {
            let h = Self::fnv1a(feature);
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            out[slot] += sign;
        }
        out
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AssetError> {
        let lower = text.to_lowercase();
        let tokens = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::as_bytes);
        EmbeddingVector::new(self.accumulate(tokens))
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, AssetError> {
        if let Ok(text) = std::str::from_utf8(bytes) {
            return self.embed_text(text);
        }
        EmbeddingVector::new(self.accumulate(bytes.windows(4)))
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint. Images are sent as
/// base64 data URLs in the `input` field.
pub struct HttpEmbedder {
    api_base: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(api_base: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .new_agent();
        Self { api_base: api_base.into(), api_key, model: model.into(), dim, agent }
    }

    /// Reads `EMBED_API_BASE`, `EMBED_API_KEY`, `EMBED_MODEL` and `EMBED_DIM`.
    pub fn from_env() -> Result<Self, AssetError> {
        let base = env::var("EMBED_API_BASE").map_err(|_| AssetError::Embedding("EMBED_API_BASE is not set".into()))?;
        let model = env::var("EMBED_MODEL").unwrap_or_else(|_| "clip".into());
        let dim = env::var("EMBED_DIM")
            .ok()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| AssetError::Embedding("EMBED_DIM must be a positive integer".into()))?;
        Ok(Self::new(base, env::var("EMBED_API_KEY").ok(), model, dim))
    }

    fn request(&self, input: Value) -> Result<EmbeddingVector, AssetError> {
        let url = format!("{}/embeddings", self.api_base.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({ "model": self.model, "input": input }))
            .map_err(|e| AssetError::Embedding(e.to_string()))?;
        let status = resp.status().as_u16();
        let body: Value = resp.body_mut().read_json().map_err(|e| AssetError::Embedding(e.to_string()))?;
        if status != 200 {
            return Err(AssetError::Embedding(format!("embedding endpoint returned {status}: {body}")));
        }
        let values = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| AssetError::Embedding("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| AssetError::Embedding("embedding contains non-numbers".into()))?;
        if values.len() != self.dim {
            return Err(AssetError::DimensionMismatch { expected: self.dim, found: values.len() });
        }
        EmbeddingVector::new(values)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AssetError> {
        self.request(Value::String(text.to_string()))
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector, AssetError> {
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        self.request(Value::String(format!("data:image/png;base64,{data}")))
    }
}

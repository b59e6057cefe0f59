use std::env;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    CompletionRequest, CompletionResponse, LanguageModel, MessageRole, ProviderError, ProviderMeta,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiveProviderConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Model used for requests carrying images; falls back to `model`.
    pub vision_model: Option<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl LiveProviderConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            vision_model: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(300),
        }
    }

    /// Reads `LLM_API_BASE`, `LLM_API_KEY`, `LLM_MODEL` and `LLM_VISION_MODEL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let base = env::var("LLM_API_BASE")
            .map_err(|_| ProviderError::Config("LLM_API_BASE is not set".into()))?;
        let model =
            env::var("LLM_MODEL").map_err(|_| ProviderError::Config("LLM_MODEL is not set".into()))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        cfg.vision_model = env::var("LLM_VISION_MODEL").ok().filter(|m| !m.is_empty());
        Ok(cfg)
    }
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
pub struct LiveProvider {
    config: LiveProviderConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(CompletionResponse),
    Retry(String),
}

impl LiveProvider {
    pub fn new(config: LiveProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'))
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let model = if request.images.is_empty() {
            &self.config.model
        } else {
            self.config.vision_model.as_ref().unwrap_or(&self.config.model)
        };
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        let last_user = request.messages.iter().rposition(|m| m.role == MessageRole::User);
        for (i, m) in request.messages.iter().enumerate() {
            let role = match m.role {
                MessageRole::User => "user",
                MessageRole::Assistant => "assistant",
            };
            if Some(i) == last_user && !request.images.is_empty() {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for image in &request.images {
                    let data = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
                    parts.push(json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{data}", image.media_type)}
                    }));
                }
                messages.push(json!({"role": role, "content": parts}));
            } else {
                messages.push(json!({"role": role, "content": m.text}));
            }
        }
        json!({
            "model": model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, ProviderError> {
        let started = Instant::now();
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(body) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => {
                let text = response.body_mut().read_to_string().unwrap_or_default();
                return Err(ProviderError::Auth(format!("HTTP {status}: {text}")));
            }
            408 | 429 | 500..=599 => return Ok(Attempt::Retry(format!("HTTP {status}"))),
            _ => {
                let text = response.body_mut().read_to_string().unwrap_or_default();
                return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
            }
        }
        let payload: Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Ok(Attempt::Retry(format!("unreadable response body: {e}"))),
        };
        let choice = &payload["choices"][0];
        let text = match &choice["message"]["content"] {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
            _ => String::new(),
        };
        let truncated = choice["finish_reason"].as_str() == Some("length");
        if text.trim().is_empty() && !truncated {
            let reason = choice["finish_reason"].as_str().unwrap_or("empty output");
            return Err(ProviderError::Refusal(reason.to_string()));
        }
        Ok(Attempt::Done(CompletionResponse {
            text,
            meta: ProviderMeta {
                latency_ms: started.elapsed().as_millis() as u64,
                prompt_tokens: payload["usage"]["prompt_tokens"].as_u64(),
                completion_tokens: payload["usage"]["completion_tokens"].as_u64(),
                truncated,
            },
        }))
    }
}

impl LanguageModel for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.check()?;
        let body = self.body(request);
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(backoff);
                backoff = backoff.saturating_mul(2);
            }
            match self.attempt(&body)? {
                Attempt::Done(response) => return Ok(response),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(ProviderError::Transport(format!(
            "giving up after {} retries: {last}",
            self.config.max_retries
        )))
    }

    fn supports_vision(&self) -> bool {
        true
    }
}

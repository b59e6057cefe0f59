//! Text and vision completion providers.
//!
//! Every model call in the crate goes through [`LanguageModel`]. Wire formats
//! live only in [`live`]; tests drive the system with [`ReplayProvider`].

mod live;
mod replay;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveProvider, LiveProviderConfig};
pub use replay::{ReplayProvider, ScriptEntry};

/// The agent a request is made on behalf of. Replay scripts are keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    BroadPlanner,
    SubPlanner,
    LeafAssigner,
    TaskGenerator,
    CodeGenerator,
    LayoutGenerator,
    CompileEvaluator,
    PlacementEvaluator,
    CrashEvaluator,
    VisualEvaluator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 10] = [
        AgentRole::BroadPlanner,
        AgentRole::SubPlanner,
        AgentRole::LeafAssigner,
        AgentRole::TaskGenerator,
        AgentRole::CodeGenerator,
        AgentRole::LayoutGenerator,
        AgentRole::CompileEvaluator,
        AgentRole::PlacementEvaluator,
        AgentRole::CrashEvaluator,
        AgentRole::VisualEvaluator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::BroadPlanner => "broad_planner",
            AgentRole::SubPlanner => "sub_planner",
            AgentRole::LeafAssigner => "leaf_assigner",
            AgentRole::TaskGenerator => "task_generator",
            AgentRole::CodeGenerator => "code_generator",
            AgentRole::LayoutGenerator => "layout_generator",
            AgentRole::CompileEvaluator => "compile_evaluator",
            AgentRole::PlacementEvaluator => "placement_evaluator",
            AgentRole::CrashEvaluator => "crash_evaluator",
            AgentRole::VisualEvaluator => "visual_evaluator",
        }
    }

    pub fn parse(tag: &str) -> Option<AgentRole> {
        Self::ALL.into_iter().find(|r| r.as_str() == tag)
    }

    pub fn is_evaluator(self) -> bool {
        matches!(
            self,
            AgentRole::CompileEvaluator
                | AgentRole::PlacementEvaluator
                | AgentRole::CrashEvaluator
                | AgentRole::VisualEvaluator
        )
    }

    /// Generation roles sample; evaluators stay deterministic.
    pub fn default_temperature(self) -> f32 {
        if self.is_evaluator() {
            0.0
        } else {
            0.7
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: MessageRole::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, text: text.into() }
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBlob {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for ImageBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBlob")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub images: Vec<ImageBlob>,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(role: AgentRole, system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            role,
            system_prompt: system_prompt.into(),
            messages: vec![Message::user(user)],
            images: Vec::new(),
            temperature: role.default_temperature(),
            max_tokens: 4096,
        }
    }

    pub fn with_images(mut self, images: Vec<ImageBlob>) -> Self {
        self.images = images;
        self
    }

    /// Appends a follow-up turn, e.g. a reprompt after a parse failure.
    pub fn follow_up(mut self, reply: impl Into<String>, user: impl Into<String>) -> Self {
        self.messages.push(Message::assistant(reply));
        self.messages.push(Message::user(user));
        self
    }

    /// All prompt text in one string; handy for asserting on captured requests.
    pub fn transcript(&self) -> String {
        let mut out = self.system_prompt.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }

    pub fn prompt_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system_prompt.as_bytes());
        for m in &self.messages {
            hasher.update([0u8]);
            hasher.update(m.text.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn check(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("request has no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub meta: ProviderMeta,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("provider refused or returned no output: {0}")]
    Refusal(String),
    #[error("replay script exhausted for role {0}")]
    ScriptExhausted(AgentRole),
    #[error("provider has no vision capability")]
    NoVisionCapability,
    #[error("vision request carries no images")]
    MissingImages,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider not configured: {0}")]
    Config(String),
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;

    fn supports_vision(&self) -> bool;

    fn complete_vision(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        if request.images.is_empty() {
            return Err(ProviderError::MissingImages);
        }
        if !self.supports_vision() {
            return Err(ProviderError::NoVisionCapability);
        }
        self.complete(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(request)
    }

    fn supports_vision(&self) -> bool {
        (**self).supports_vision()
    }

    fn complete_vision(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete_vision(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_round_trip_tags() {
        for role in AgentRole::ALL {
            assert_eq!(AgentRole::parse(role.as_str()), Some(role));
        }
        assert_eq!(AgentRole::VisualEvaluator.default_temperature(), 0.0);
        assert_eq!(AgentRole::CodeGenerator.default_temperature(), 0.7);
    }

    #[test]
    fn prompt_hash_tracks_content() {
        let a = CompletionRequest::new(AgentRole::SubPlanner, "sys", "hello");
        let b = CompletionRequest::new(AgentRole::SubPlanner, "sys", "hello!");
        assert_ne!(a.prompt_hash(), b.prompt_hash());
        assert_eq!(a.prompt_hash(), a.clone().prompt_hash());
    }
}

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use super::{
    AgentRole, CompletionRequest, CompletionResponse, LanguageModel, ProviderError, ProviderMeta,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptEntry {
    pub text: String,
    /// When set, the request must carry exactly this many images.
    pub expect_images: Option<usize>,
}

impl ScriptEntry {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), expect_images: None }
    }
}

/// Deterministic provider answering from per-role FIFO scripts and recording
/// every request it receives.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    queues: Mutex<BTreeMap<AgentRole, VecDeque<ScriptEntry>>>,
    captured: Mutex<Vec<CompletionRequest>>,
    vision: bool,
}

impl ReplayProvider {
    pub fn new() -> Self {
        Self { vision: true, ..Self::default() }
    }

    pub fn without_vision(mut self) -> Self {
        self.vision = false;
        self
    }

    pub fn push(&self, role: AgentRole, text: impl Into<String>) -> &Self {
        self.push_entry(role, ScriptEntry::text(text))
    }

    pub fn push_entry(&self, role: AgentRole, entry: ScriptEntry) -> &Self {
        self.queues.lock().unwrap().entry(role).or_default().push_back(entry);
        self
    }

    pub fn with(self, role: AgentRole, responses: &[&str]) -> Self {
        for r in responses {
            self.push(role, *r);
        }
        self
    }

    /// Loads a script directory. Files are named `<order>-<role>.txt` and are
    /// queued per role in lexicographic file-name order. A file whose first
    /// line is `#images <n>` expects requests with exactly `n` images.
    pub fn from_dir(dir: &Path) -> Result<Self, ProviderError> {
        let provider = Self::new();
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for path in files {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let tag = stem.split_once('-').map(|(_, tag)| tag).unwrap_or(stem);
            let role = AgentRole::parse(tag).ok_or_else(|| {
                ProviderError::Config(format!("{}: unknown role tag {tag:?}", path.display()))
            })?;
            let body = fs::read_to_string(&path)
                .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
            let entry = match body.strip_prefix("#images ") {
                Some(rest) => {
                    let (count, text) = rest.split_once('\n').unwrap_or((rest, ""));
                    let count = count.trim().parse().map_err(|_| {
                        ProviderError::Config(format!("{}: bad #images header", path.display()))
                    })?;
                    ScriptEntry { text: text.to_string(), expect_images: Some(count) }
                }
                None => ScriptEntry::text(body),
            };
            provider.push_entry(role, entry);
        }
        Ok(provider)
    }

    /// Drops the first `n` entries for `role`; used to resume a run whose
    /// earlier calls are already recorded.
    pub fn skip(&self, role: AgentRole, n: usize) {
        let mut queues = self.queues.lock().unwrap();
        if let Some(q) = queues.get_mut(&role) {
            for _ in 0..n.min(q.len()) {
                q.pop_front();
            }
        }
    }

    pub fn remaining(&self, role: AgentRole) -> usize {
        self.queues.lock().unwrap().get(&role).map_or(0, VecDeque::len)
    }

    /// Every request received so far, in call order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.captured.lock().unwrap().clone()
    }

    pub fn requests_for(&self, role: AgentRole) -> Vec<CompletionRequest> {
        self.requests().into_iter().filter(|r| r.role == role).collect()
    }
}

impl LanguageModel for ReplayProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.check()?;
        if !request.images.is_empty() && !self.vision {
            return Err(ProviderError::NoVisionCapability);
        }
        self.captured.lock().unwrap().push(request.clone());
        let entry = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&request.role)
            .and_then(VecDeque::pop_front)
            .ok_or(ProviderError::ScriptExhausted(request.role))?;
        if let Some(expected) = entry.expect_images {
            if expected != request.images.len() {
                return Err(ProviderError::InvalidRequest(format!(
                    "script expects {expected} images, request has {}",
                    request.images.len()
                )));
            }
        }
        Ok(CompletionResponse { text: entry.text, meta: ProviderMeta::default() })
    }

    fn supports_vision(&self) -> bool {
        self.vision
    }
}

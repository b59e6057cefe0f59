use std::path::Path;
use std::sync::Mutex;

use crate::codegen::{CodeBundle, LayoutSpec};
use crate::engine::{
    CompileReport, EngineAdapter, EngineAssetRef, EngineError, RunContext, RunReport, ScreenshotRef, SessionHandle,
};
use crate::garden::NodeId;
use crate::persistence::{EngineCallRecord, EngineOp, EventPayload, ProviderCallRecord};
use crate::provider::{CompletionRequest, CompletionResponse, ImageBlob, LanguageModel, ProviderError};

/// Collects provider and engine call summaries in call order.
#[derive(Debug, Default)]
pub(crate) struct CallRecorder {
    events: Mutex<Vec<EventPayload>>,
}

impl CallRecorder {
    fn push(&self, payload: EventPayload) {
        self.events.lock().unwrap().push(payload);
    }

    pub fn take(&self) -> Vec<EventPayload> {
        std::mem::take(&mut *self.events.lock().unwrap())
    }
}

pub(crate) struct RecordingModel<'a> {
    inner: &'a dyn LanguageModel,
    recorder: &'a CallRecorder,
}

impl<'a> RecordingModel<'a> {
    pub fn new(inner: &'a dyn LanguageModel, recorder: &'a CallRecorder) -> Self {
        Self { inner, recorder }
    }

    fn record(
        &self,
        request: &CompletionRequest,
        result: Result<CompletionResponse, ProviderError>,
    ) -> Result<CompletionResponse, ProviderError> {
        let consumed = match &result {
            Ok(_) => true,
            Err(e) => !matches!(
                e,
                ProviderError::ScriptExhausted(_)
                    | ProviderError::NoVisionCapability
                    | ProviderError::MissingImages
                    | ProviderError::InvalidRequest(_)
            ),
        };
        let call = ProviderCallRecord {
            role: request.role,
            prompt_hash: request.prompt_hash(),
            images: request.images.len(),
            response_chars: result.as_ref().map(|r| r.text.chars().count()).unwrap_or(0),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
            consumed,
        };
        self.recorder.push(EventPayload::ProviderCall { call });
        result
    }
}

impl LanguageModel for RecordingModel<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let result = self.inner.complete(request);
        self.record(request, result)
    }

    fn supports_vision(&self) -> bool {
        self.inner.supports_vision()
    }

    fn complete_vision(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let result = self.inner.complete_vision(request);
        self.record(request, result)
    }
}

pub(crate) struct RecordingEngine<'a> {
    inner: &'a dyn EngineAdapter,
    recorder: &'a CallRecorder,
    task: Option<NodeId>,
}

impl<'a> RecordingEngine<'a> {
    pub fn new(inner: &'a dyn EngineAdapter, recorder: &'a CallRecorder, task: Option<NodeId>) -> Self {
        Self { inner, recorder, task }
    }

    fn record<T>(
        &self,
        op: EngineOp,
        path: Option<&Path>,
        result: &Result<T, EngineError>,
        reference: impl FnOnce(&T) -> Option<String>,
    ) {
        let consumed = match result {
            Ok(_) => true,
            Err(e) => matches!(e, EngineError::Unavailable(_) | EngineError::LaunchFailure(_)),
        };
        let call = EngineCallRecord {
            op,
            ok: result.is_ok(),
            task: self.task,
            path: path.map(|p| p.display().to_string()),
            reference: result.as_ref().ok().and_then(reference),
            consumed,
        };
        self.recorder.push(EventPayload::EngineCall { call });
    }
}

impl EngineAdapter for RecordingEngine<'_> {
    fn compile_project(&self, bundle: &CodeBundle) -> Result<CompileReport, EngineError> {
        let result = self.inner.compile_project(bundle);
        self.record(EngineOp::Compile, None, &result, |r| Some(if r.success { "success" } else { "failure" }.into()));
        result
    }

    fn run_simulation(&self, layout: &LayoutSpec, run: RunContext) -> Result<RunReport, EngineError> {
        let result = self.inner.run_simulation(layout, run);
        self.record(EngineOp::Run, None, &result, |r| {
            Some(serde_json::to_value(r.outcome).ok()?.as_str()?.to_string())
        });
        result
    }

    fn read_screenshot(&self, shot: &ScreenshotRef) -> Result<ImageBlob, EngineError> {
        self.inner.read_screenshot(shot)
    }

    fn import_mesh(&self, file: &Path) -> Result<EngineAssetRef, EngineError> {
        let result = self.inner.import_mesh(file);
        self.record(EngineOp::Import, Some(file), &result, |r| Some(r.reference.clone()));
        result
    }

    fn launch_user_session(&self, source_dir: &Path, layout_path: &Path) -> Result<SessionHandle, EngineError> {
        let result = self.inner.launch_user_session(source_dir, layout_path);
        self.record(EngineOp::Launch, Some(layout_path), &result, |s| Some(s.session_id.clone()));
        result
    }

    fn isolates_processes(&self) -> bool {
        self.inner.isolates_processes()
    }
}

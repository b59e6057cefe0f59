use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    check_mesh_file, screenshot_schedule, CompileReport, EngineAdapter, EngineAssetRef, EngineError,
    RunContext, RunOutcome, RunReport, ScreenshotRef, SessionHandle, Workspace, INIT_ERROR_TAG,
    INIT_MARKER,
};
use crate::codegen::{CodeBundle, LayoutSpec};
use crate::provider::ImageBlob;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRun {
    pub outcome: Option<RunOutcome>,
    #[serde(default)]
    pub runtime_log: String,
    #[serde(default)]
    pub crash_log: Option<String>,
    /// Scripted placement excerpt; synthesized from the layout when absent.
    #[serde(default)]
    pub placement_log: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockImport {
    #[serde(default)]
    pub error: Option<String>,
}

/// Scripted engine behaviour, consumed first-in first-out per operation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScenario {
    #[serde(default)]
    pub compile: VecDeque<CompileReport>,
    #[serde(default)]
    pub run: VecDeque<MockRun>,
    #[serde(default)]
    pub import: VecDeque<MockImport>,
    /// Let imports succeed once the import script runs out.
    #[serde(default)]
    pub auto_import: bool,
}

impl MockScenario {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn compile_ok(mut self) -> Self {
        self.compile.push_back(CompileReport { success: true, log: "Build succeeded.".into() });
        self
    }

    pub fn compile_fail(mut self, log: &str) -> Self {
        self.compile.push_back(CompileReport { success: false, log: log.into() });
        self
    }

    pub fn run_ok(mut self) -> Self {
        self.run.push_back(MockRun {
            outcome: Some(RunOutcome::Ran),
            runtime_log: "LogTemp: simulation running".into(),
            ..MockRun::default()
        });
        self
    }

    pub fn run_crash(mut self, crash_log: &str) -> Self {
        self.run.push_back(MockRun {
            outcome: Some(RunOutcome::Crashed),
            crash_log: Some(crash_log.into()),
            ..MockRun::default()
        });
        self
    }

    pub fn run_placement_error(mut self) -> Self {
        self.run.push_back(MockRun { outcome: Some(RunOutcome::PlacementError), ..MockRun::default() });
        self
    }

    pub fn import_ok(mut self) -> Self {
        self.import.push_back(MockImport::default());
        self
    }

    pub fn with_auto_import(mut self) -> Self {
        self.auto_import = true;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// A call received by the mock, kept for assertions.
#[derive(Clone, Debug, PartialEq)]
pub enum MockCall {
    Compile { content_hash: String },
    Run { layout: LayoutSpec, context: RunContext },
    Import { file: PathBuf },
    Launch { source_dir: PathBuf, layout_path: PathBuf },
}

#[derive(Debug, Default)]
struct MockState {
    scenario: MockScenario,
    last_compile: Option<(CodeBundle, bool)>,
    calls: Vec<MockCall>,
}

/// Deterministic engine stand-in driven by a [`MockScenario`].
#[derive(Debug)]
pub struct MockEngine {
    state: Mutex<MockState>,
    workspace: Option<Workspace>,
    isolates: bool,
}

impl MockEngine {
    pub fn new(scenario: MockScenario) -> Self {
        Self {
            state: Mutex::new(MockState { scenario, ..MockState::default() }),
            workspace: None,
            isolates: true,
        }
    }

    /// Writes placeholder screenshots and compiled sources under `workspace`.
    pub fn with_workspace(mut self, workspace: Workspace) -> Self {
        self.workspace = Some(workspace);
        self
    }

    pub fn without_process_isolation(mut self) -> Self {
        self.isolates = false;
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn launches(&self) -> Vec<MockCall> {
        self.calls().into_iter().filter(|c| matches!(c, MockCall::Launch { .. })).collect()
    }

    /// Discards already-consumed scenario entries when resuming a run.
    pub fn skip(&self, compiles: usize, runs: usize, imports: usize) {
        let mut state = self.state.lock().unwrap();
        let s = &mut state.scenario;
        s.compile.drain(..compiles.min(s.compile.len()));
        s.run.drain(..runs.min(s.run.len()));
        s.import.drain(..imports.min(s.import.len()));
    }

    pub fn remaining(&self) -> (usize, usize, usize) {
        let state = self.state.lock().unwrap();
        let s = &state.scenario;
        (s.compile.len(), s.run.len(), s.import.len())
    }

    fn placeholder(path: &str, index: usize) -> Vec<u8> {
        // 16x9 binary PPM, shade derived from the capture index and path.
        let shade = (path.bytes().fold(index as u32 * 31, |h, b| h.wrapping_mul(33) ^ b as u32) & 0xff) as u8;
        let mut bytes = b"P6\n16 9\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(shade, 16 * 9 * 3));
        bytes
    }

    fn synthesize_placement_log(layout: &LayoutSpec, bundle: Option<&CodeBundle>) -> String {
        let declared = bundle.map(CodeBundle::declared_classes).unwrap_or_default();
        let mut lines = vec![format!("{INIT_MARKER} BEGIN placing {} actors", layout.actors.len())];
        let mut reported = false;
        for actor in &layout.actors {
            let known = declared.iter().any(|c| {
                c == &actor.class_name || c.strip_prefix('A') == Some(actor.class_name.as_str())
            });
            if known {
                lines.push(format!("{INIT_MARKER} spawned {}", actor.class_name));
            } else {
                lines.push(format!(
                    "{INIT_MARKER} {INIT_ERROR_TAG}: class '{}' does not exist in the project",
                    actor.class_name
                ));
                reported = true;
            }
        }
        if !reported {
            lines.push(format!("{INIT_MARKER} {INIT_ERROR_TAG}: placement script raised an exception"));
        }
        lines.join("\n")
    }
}

impl EngineAdapter for MockEngine {
    fn compile_project(&self, bundle: &CodeBundle) -> Result<CompileReport, EngineError> {
        let mut state = self.state.lock().unwrap();
        state.calls.push(MockCall::Compile { content_hash: bundle.content_hash() });
        let report = state.scenario.compile.pop_front().ok_or(EngineError::ScenarioExhausted("compile"))?;
        if let Some(ws) = &self.workspace {
            Workspace::write_bundle(&ws.source_dir(), bundle)?;
        }
        state.last_compile = Some((bundle.clone(), report.success));
        Ok(report)
    }

    fn run_simulation(&self, layout: &LayoutSpec, run: RunContext) -> Result<RunReport, EngineError> {
        let mut state = self.state.lock().unwrap();
        state.calls.push(MockCall::Run { layout: layout.clone(), context: run });
        if !matches!(state.last_compile, Some((_, true))) {
            return Err(EngineError::Protocol("run requested without a successful compile".into()));
        }
        let scripted = state.scenario.run.pop_front().ok_or(EngineError::ScenarioExhausted("run"))?;
        let outcome = scripted.outcome.unwrap_or(RunOutcome::Ran);
        let mut report = RunReport {
            outcome,
            runtime_log: scripted.runtime_log,
            crash_log: None,
            placement_log_excerpt: None,
            screenshots: Vec::new(),
        };
        match outcome {
            RunOutcome::Ran => {
                let dir = Workspace::screenshots_rel(run.task, run.attempt);
                for (i, t) in screenshot_schedule().enumerate() {
                    let path = format!("{dir}/frame_{}.ppm", i + 1);
                    if let Some(ws) = &self.workspace {
                        let abs = ws.resolve(&path);
                        fs::create_dir_all(abs.parent().expect("has parent"))?;
                        fs::write(abs, Self::placeholder(&path, i))?;
                    }
                    report.screenshots.push(ScreenshotRef { path, at_seconds: t });
                }
            }
            RunOutcome::Crashed => {
                report.crash_log = Some(scripted.crash_log.unwrap_or_default());
            }
            RunOutcome::PlacementError => {
                let bundle = state.last_compile.as_ref().map(|(b, _)| b);
                report.placement_log_excerpt = Some(
                    scripted
                        .placement_log
                        .unwrap_or_else(|| Self::synthesize_placement_log(layout, bundle)),
                );
            }
        }
        report.check()?;
        Ok(report)
    }

    fn read_screenshot(&self, shot: &ScreenshotRef) -> Result<ImageBlob, EngineError> {
        let bytes = match &self.workspace {
            Some(ws) => fs::read(ws.resolve(&shot.path))?,
            None => Self::placeholder(&shot.path, shot.at_seconds as usize - 1),
        };
        Ok(ImageBlob { media_type: "image/x-portable-pixmap".into(), bytes })
    }

    fn import_mesh(&self, file: &Path) -> Result<EngineAssetRef, EngineError> {
        check_mesh_file(file)?;
        let mut state = self.state.lock().unwrap();
        state.calls.push(MockCall::Import { file: file.to_path_buf() });
        let scripted = match state.scenario.import.pop_front() {
            Some(entry) => entry,
            None if state.scenario.auto_import => MockImport::default(),
            None => return Err(EngineError::ScenarioExhausted("import")),
        };
        if let Some(message) = scripted.error {
            return Err(EngineError::Unavailable(message));
        }
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("asset");
        Ok(EngineAssetRef {
            reference: format!("/Game/Imported/{stem}"),
            source_file: file.display().to_string(),
        })
    }

    fn launch_user_session(&self, source_dir: &Path, layout_path: &Path) -> Result<SessionHandle, EngineError> {
        if !layout_path.is_file() {
            return Err(EngineError::MissingFile(layout_path.to_path_buf()));
        }
        let mut state = self.state.lock().unwrap();
        state.calls.push(MockCall::Launch {
            source_dir: source_dir.to_path_buf(),
            layout_path: layout_path.to_path_buf(),
        });
        let n = state.calls.iter().filter(|c| matches!(c, MockCall::Launch { .. })).count();
        Ok(SessionHandle {
            session_id: format!("mock-session-{n}"),
            pid: None,
            layout_path: layout_path.display().to_string(),
        })
    }

    fn isolates_processes(&self) -> bool {
        self.isolates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::ActorPlacement;
    use crate::engine::SCREENSHOT_COUNT;
    use crate::garden::NodeId;

    fn bundle() -> CodeBundle {
        let mut b = CodeBundle::default();
        b.files.insert(
            "Source/Garden/Sheep.h".into(),
            "UCLASS()\nclass GARDEN_API ASheep : public AActor\n{\n};".into(),
        );
        b
    }

    fn ctx() -> RunContext {
        RunContext { task: NodeId(7), attempt: 1 }
    }

    #[test]
    fn compile_results_are_fifo() {
        let engine = MockEngine::new(MockScenario::new().compile_ok().compile_fail("error C2065: 'x': undeclared identifier"));
        assert!(engine.compile_project(&bundle()).unwrap().success);
        let second = engine.compile_project(&bundle()).unwrap();
        assert!(!second.success);
        assert!(second.log.contains("C2065"));
        assert_eq!(engine.compile_project(&bundle()), Err(EngineError::ScenarioExhausted("compile")));
    }

    #[test]
    fn ran_yields_six_screenshots() {
        let dir = tempfile::tempdir().unwrap();
        let engine = MockEngine::new(MockScenario::new().compile_ok().run_ok())
            .with_workspace(Workspace::new(dir.path()));
        engine.compile_project(&bundle()).unwrap();
        let report = engine.run_simulation(&LayoutSpec::single_at_origin("Sheep"), ctx()).unwrap();
        assert_eq!(report.outcome, RunOutcome::Ran);
        assert_eq!(report.screenshots.len(), SCREENSHOT_COUNT);
        let image = engine.read_screenshot(&report.screenshots[5]).unwrap();
        assert!(image.bytes.starts_with(b"P6"));
        assert!(dir.path().join("screenshots/n7/1/frame_6.ppm").is_file());
    }

    #[test]
    fn placement_error_names_unknown_class() {
        let engine = MockEngine::new(MockScenario::new().compile_ok().run_placement_error());
        engine.compile_project(&bundle()).unwrap();
        let mut layout = LayoutSpec::single_at_origin("Sheep");
        layout.actors.push(ActorPlacement { class_name: "GrassTuft".into(), ..layout.actors[0].clone() });
        let report = engine.run_simulation(&layout, ctx()).unwrap();
        assert_eq!(report.outcome, RunOutcome::PlacementError);
        let excerpt = report.placement_log_excerpt.unwrap();
        assert!(excerpt.contains("'GrassTuft'"));
        assert!(!excerpt.contains("'Sheep'"));
    }

    #[test]
    fn crash_has_log_and_no_screenshots() {
        let engine = MockEngine::new(MockScenario::new().compile_ok().run_crash("Access violation reading 0x0"));
        engine.compile_project(&bundle()).unwrap();
        let report = engine.run_simulation(&LayoutSpec::single_at_origin("Sheep"), ctx()).unwrap();
        assert_eq!(report.outcome, RunOutcome::Crashed);
        assert!(report.crash_log.unwrap().contains("Access violation"));
        assert!(report.screenshots.is_empty());
    }

    #[test]
    fn run_requires_successful_compile() {
        let engine = MockEngine::new(MockScenario::new().compile_fail("boom").run_ok());
        engine.compile_project(&bundle()).unwrap();
        assert!(matches!(
            engine.run_simulation(&LayoutSpec::single_at_origin("Sheep"), ctx()),
            Err(EngineError::Protocol(_))
        ));
    }

    #[test]
    fn imports() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = dir.path().join("sheep.glb");
        fs::write(&mesh, b"glTF").unwrap();
        let engine = MockEngine::new(MockScenario::new().import_ok());
        let r = engine.import_mesh(&mesh).unwrap();
        assert_eq!(r.reference, "/Game/Imported/sheep");
        assert_eq!(engine.import_mesh(&mesh), Err(EngineError::ScenarioExhausted("import")));
        assert!(matches!(engine.import_mesh(&dir.path().join("nope.glb")), Err(EngineError::MissingFile(_))));
        let obj = dir.path().join("sheep.obj");
        fs::write(&obj, b"o").unwrap();
        assert!(matches!(engine.import_mesh(&obj), Err(EngineError::UnsupportedFormat(_))));
    }

    #[test]
    fn scenario_json() {
        let s = MockScenario::from_json(
            r#"{"compile":[{"success":false,"log":"e"}],"run":[{"outcome":"crashed","crash_log":"x"}],"auto_import":true}"#,
        )
        .unwrap();
        assert_eq!(s.compile.len(), 1);
        assert_eq!(s.run[0].outcome, Some(RunOutcome::Crashed));
        assert!(s.auto_import);
    }
}

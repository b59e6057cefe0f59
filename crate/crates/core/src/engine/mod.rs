//! Everything the host game engine does, behind one trait.
//!
//! [`MockEngine`] is the reference implementation used by the test suites.
//! [`ProcessEngine`] drives a real toolchain through configurable external
//! commands.

mod mock;
mod process;
mod workspace;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockCall, MockEngine, MockImport, MockRun, MockScenario};
pub use process::{ProcessEngine, ProcessEngineConfig, INIT_ERROR_TAG, INIT_MARKER, PLACEMENT_EXIT_CODE};
pub use workspace::Workspace;

use crate::codegen::{CodeBundle, LayoutSpec};
use crate::garden::NodeId;
use crate::provider::ImageBlob;

/// Number of frames captured per successful run.
pub const SCREENSHOT_COUNT: usize = 6;
/// Simulated seconds between captures; the first capture is at one interval.
pub const SCREENSHOT_INTERVAL_SECS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub success: bool,
    pub log: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Ran,
    PlacementError,
    Crashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenshotRef {
    /// Path relative to the garden workspace.
    pub path: String,
    pub at_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub runtime_log: String,
    pub crash_log: Option<String>,
    pub placement_log_excerpt: Option<String>,
    pub screenshots: Vec<ScreenshotRef>,
}

impl RunReport {
    pub fn check(&self) -> Result<(), EngineError> {
        let ok = match self.outcome {
            RunOutcome::Ran => self.screenshots.len() == SCREENSHOT_COUNT,
            RunOutcome::Crashed => self.crash_log.is_some(),
            RunOutcome::PlacementError => self.placement_log_excerpt.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(EngineError::Protocol(format!("inconsistent run report for {:?}", self.outcome)))
        }
    }
}

/// Identifies the task attempt a run belongs to; decides where captures go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunContext {
    pub task: NodeId,
    pub attempt: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineAssetRef {
    /// Engine-side asset path, e.g. `/Game/Generated/Sheep`.
    pub reference: String,
    pub source_file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub pid: Option<u32>,
    pub layout_path: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine unavailable: {0}")]
    Unavailable(String),
    #[error("build toolchain missing: {0}")]
    ToolchainMissing(String),
    #[error("engine failed to launch: {0}")]
    LaunchFailure(String),
    #[error("mock scenario has no scripted {0} result left")]
    ScenarioExhausted(&'static str),
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("engine protocol violation: {0}")]
    Protocol(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

pub const MESH_EXTENSIONS: [&str; 2] = ["glb", "gltf"];

pub(crate) fn check_mesh_file(path: &Path) -> Result<(), EngineError> {
    if !path.is_file() {
        return Err(EngineError::MissingFile(path.to_path_buf()));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    if !MESH_EXTENSIONS.contains(&ext.as_str()) {
        return Err(EngineError::UnsupportedFormat(path.display().to_string()));
    }
    Ok(())
}

pub trait EngineAdapter: Send + Sync {
    /// Writes the bundle into the project sources and builds it.
    fn compile_project(&self, bundle: &CodeBundle) -> Result<CompileReport, EngineError>;

    /// Places the layout through the init script, runs the simulation and
    /// captures [`SCREENSHOT_COUNT`] frames.
    fn run_simulation(&self, layout: &LayoutSpec, run: RunContext) -> Result<RunReport, EngineError>;

    fn read_screenshot(&self, shot: &ScreenshotRef) -> Result<ImageBlob, EngineError>;

    /// Converts a GLB/glTF file into an engine asset.
    fn import_mesh(&self, file: &Path) -> Result<EngineAssetRef, EngineError>;

    /// Opens an interactive session on a materialized snapshot.
    fn launch_user_session(&self, source_dir: &Path, layout_path: &Path) -> Result<SessionHandle, EngineError>;

    /// Whether backend runs can proceed while a user session is open.
    fn isolates_processes(&self) -> bool;
}

impl<T: EngineAdapter + ?Sized> EngineAdapter for std::sync::Arc<T> {
    fn compile_project(&self, bundle: &CodeBundle) -> Result<CompileReport, EngineError> {
        (**self).compile_project(bundle)
    }
    fn run_simulation(&self, layout: &LayoutSpec, run: RunContext) -> Result<RunReport, EngineError> {
        (**self).run_simulation(layout, run)
    }
    fn read_screenshot(&self, shot: &ScreenshotRef) -> Result<ImageBlob, EngineError> {
        (**self).read_screenshot(shot)
    }
    fn import_mesh(&self, file: &Path) -> Result<EngineAssetRef, EngineError> {
        (**self).import_mesh(file)
    }
    fn launch_user_session(&self, source_dir: &Path, layout_path: &Path) -> Result<SessionHandle, EngineError> {
        (**self).launch_user_session(source_dir, layout_path)
    }
    fn isolates_processes(&self) -> bool {
        (**self).isolates_processes()
    }
}

/// Capture times for a successful run: one per interval, starting at t=1s.
pub fn screenshot_schedule() -> impl Iterator<Item = f64> {
    (1..=SCREENSHOT_COUNT).map(|i| i as f64 * SCREENSHOT_INTERVAL_SECS)
}

/// Extracts the lines between the init script's begin marker and the end of
/// its error block from an editor log.
pub fn placement_excerpt(log: &str) -> Option<String> {
    let lines: Vec<&str> = log.lines().collect();
    let begin = format!("{INIT_MARKER} BEGIN");
    let end = format!("{INIT_MARKER} END");
    let start = lines.iter().rposition(|l| l.contains(&begin))?;
    let section: Vec<&str> = lines[start..]
        .iter()
        .take_while(|l| !l.contains(&end))
        .copied()
        .collect();
    if section.iter().any(|l| l.contains(INIT_ERROR_TAG)) {
        Some(section.join("\n"))
    } else {
        None
    }
}

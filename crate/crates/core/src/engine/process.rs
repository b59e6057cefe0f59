use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{
    check_mesh_file, placement_excerpt, screenshot_schedule, CompileReport, EngineAdapter, EngineAssetRef,
    EngineError, RunContext, RunOutcome, RunReport, ScreenshotRef, SessionHandle, Workspace, SCREENSHOT_COUNT,
    SCREENSHOT_INTERVAL_SECS,
};
use crate::codegen::{CodeBundle, LayoutSpec};
use crate::provider::ImageBlob;

/// Prefix of every line the placement script writes to the editor log.
pub const INIT_MARKER: &str = "[garden-init]";
/// Tag the placement script puts on lines describing a failure.
pub const INIT_ERROR_TAG: &str = "ERROR";
/// Exit status the editor wrapper uses when the placement script failed.
pub const PLACEMENT_EXIT_CODE: i32 = 3;

/// External commands driving a real engine install. Arguments may contain
/// placeholders: `{project}`, `{layout}`, `{screenshots}`, `{count}`,
/// `{interval}` and `{file}`.
#[derive(Clone, Debug)]
pub struct ProcessEngineConfig {
    /// Engine project root; bundle paths are written relative to it.
    pub project_dir: PathBuf,
    pub workspace: Workspace,
    pub build_command: Vec<String>,
    /// Launches the editor, runs the placement script on `{layout}`,
    /// simulates and writes `{count}` captures into `{screenshots}`.
    pub run_command: Vec<String>,
    /// Converts `{file}` into an engine asset; the last stdout line is taken
    /// as the asset reference.
    pub import_command: Vec<String>,
    pub session_command: Vec<String>,
    pub build_timeout: Duration,
    pub run_timeout: Duration,
    /// Whether backend runs may overlap an open user session.
    pub isolates_processes: bool,
}

impl ProcessEngineConfig {
    pub fn new(project_dir: impl Into<PathBuf>, workspace: Workspace) -> Self {
        Self {
            project_dir: project_dir.into(),
            workspace,
            build_command: Vec::new(),
            run_command: Vec::new(),
            import_command: Vec::new(),
            session_command: Vec::new(),
            build_timeout: Duration::from_secs(1800),
            run_timeout: Duration::from_secs(600),
            isolates_processes: true,
        }
    }
}

struct Finished {
    code: Option<i32>,
    timed_out: bool,
    output: String,
}

/// Engine adapter that shells out to configured commands. Only processes it
/// spawned itself are ever killed.
pub struct ProcessEngine {
    config: ProcessEngineConfig,
    running: Mutex<BTreeSet<u32>>,
    sessions: Mutex<Vec<Child>>,
    compiled: Mutex<bool>,
}

impl ProcessEngine {
    pub fn new(config: ProcessEngineConfig) -> Self {
        Self {
            config,
            running: Mutex::new(BTreeSet::new()),
            sessions: Mutex::new(Vec::new()),
            compiled: Mutex::new(false),
        }
    }

    /// PIDs of backend processes currently in flight.
    pub fn active_pids(&self) -> Vec<u32> {
        self.running.lock().unwrap().iter().copied().collect()
    }

    /// PIDs of user sessions that are still alive.
    pub fn session_pids(&self) -> Vec<u32> {
        let mut sessions = self.sessions.lock().unwrap();
        sessions.retain_mut(|c| matches!(c.try_wait(), Ok(None)));
        sessions.iter().map(Child::id).collect()
    }

    /// Terminates every user session this adapter opened.
    pub fn close_sessions(&self) {
        for mut child in self.sessions.lock().unwrap().drain(..) {
            let _ = child.kill();
            let _ = child.wait();
        }
    }

    fn expand(template: &[String], vars: &[(&str, String)]) -> Result<Command, EngineError> {
        let Some((program, args)) = template.split_first() else {
            return Err(EngineError::Unavailable("command is not configured".into()));
        };
        let fill = |s: &String| {
            vars.iter().fold(s.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        };
        let mut cmd = Command::new(fill(program));
        cmd.args(args.iter().map(fill));
        Ok(cmd)
    }

    fn spawn(cmd: &mut Command, missing: fn(String) -> EngineError) -> Result<Child, EngineError> {
        cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
        cmd.spawn().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
                missing(format!("{:?}: {e}", cmd.get_program()))
            }
            _ => EngineError::Io(e.to_string()),
        })
    }

    /// Runs a child to completion or until `timeout`, collecting its output.
    fn finish(&self, mut child: Child, timeout: Duration) -> Result<Finished, EngineError> {
        let pid = child.id();
        self.running.lock().unwrap().insert(pid);
        let readers: Vec<_> = [
            child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
            child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
        ]
        .into_iter()
        .flatten()
        .map(|mut stream| {
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = stream.read_to_end(&mut buf);
                buf
            })
        })
        .collect();
        let waited = child.wait_timeout(timeout);
        let (code, timed_out) = match waited {
            Ok(Some(status)) => (status.code(), false),
            Ok(None) | Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        };
        self.running.lock().unwrap().remove(&pid);
        let mut output = String::new();
        for reader in readers {
            output.push_str(&String::from_utf8_lossy(&reader.join().unwrap_or_default()));
        }
        Ok(Finished { code, timed_out, output })
    }

    fn project(&self) -> String {
        self.config.project_dir.display().to_string()
    }
}

impl Drop for ProcessEngine {
    fn drop(&mut self) {
        // User sessions are handed over to the user and left running.
        for mut child in self.sessions.lock().unwrap().drain(..) {
            let _ = child.try_wait();
        }
    }
}

fn media_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("ppm") => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}

impl EngineAdapter for ProcessEngine {
    fn compile_project(&self, bundle: &CodeBundle) -> Result<CompileReport, EngineError> {
        for (rel, text) in &bundle.files {
            let path = self.config.project_dir.join(rel);
            fs::create_dir_all(path.parent().expect("file has a parent"))?;
            fs::write(path, text)?;
        }
        Workspace::write_bundle(&self.config.workspace.source_dir(), bundle)?;
        let mut cmd = Self::expand(&self.config.build_command, &[("project", self.project())])?;
        let child = Self::spawn(&mut cmd, EngineError::ToolchainMissing)?;
        let done = self.finish(child, self.config.build_timeout)?;
        let success = done.code == Some(0);
        let mut log = done.output;
        if done.timed_out {
            log.push_str(&format!("\nbuild timed out after {:?}", self.config.build_timeout));
        }
        if !success && log.trim().is_empty() {
            log = format!("build exited with status {:?} and no output", done.code);
        }
        *self.compiled.lock().unwrap() = success;
        Ok(CompileReport { success, log })
    }

    fn run_simulation(&self, layout: &LayoutSpec, run: RunContext) -> Result<RunReport, EngineError> {
        if !*self.compiled.lock().unwrap() {
            return Err(EngineError::Protocol("run requested without a successful compile".into()));
        }
        let ws = &self.config.workspace;
        let layout_path = ws.layouts_dir().join(format!("{}-{}.json", run.task, run.attempt));
        Workspace::write_layout(&layout_path, layout)?;
        let shots_rel = Workspace::screenshots_rel(run.task, run.attempt);
        let shots_dir = ws.resolve(&shots_rel);
        if shots_dir.exists() {
            fs::remove_dir_all(&shots_dir)?;
        }
        fs::create_dir_all(&shots_dir)?;
        let vars = [
            ("project", self.project()),
            ("layout", layout_path.display().to_string()),
            ("screenshots", shots_dir.display().to_string()),
            ("count", SCREENSHOT_COUNT.to_string()),
            ("interval", SCREENSHOT_INTERVAL_SECS.to_string()),
        ];
        let mut cmd = Self::expand(&self.config.run_command, &vars)?;
        let child = Self::spawn(&mut cmd, EngineError::LaunchFailure)?;
        let done = self.finish(child, self.config.run_timeout)?;
        let mut report = RunReport {
            outcome: RunOutcome::Ran,
            runtime_log: done.output.clone(),
            crash_log: None,
            placement_log_excerpt: None,
            screenshots: Vec::new(),
        };
        let excerpt = placement_excerpt(&done.output);
        if done.code == Some(PLACEMENT_EXIT_CODE) || (done.code != Some(0) && excerpt.is_some()) {
            report.outcome = RunOutcome::PlacementError;
            report.placement_log_excerpt = Some(excerpt.unwrap_or_else(|| done.output.clone()));
        } else if done.code != Some(0) {
            report.outcome = RunOutcome::Crashed;
            let crash_file = shots_dir.join("crash.log");
            let mut crash = fs::read_to_string(&crash_file).unwrap_or(done.output);
            if done.timed_out {
                crash.push_str(&format!("\nengine killed after {:?} without finishing", self.config.run_timeout));
            }
            report.crash_log = Some(crash);
        } else {
            let mut frames: Vec<PathBuf> = fs::read_dir(&shots_dir)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| media_type(p).starts_with("image/"))
                .collect();
            frames.sort();
            if frames.len() != SCREENSHOT_COUNT {
                return Err(EngineError::Protocol(format!(
                    "expected {SCREENSHOT_COUNT} captures, found {}",
                    frames.len()
                )));
            }
            report.screenshots = frames
                .iter()
                .zip(screenshot_schedule())
                .map(|(p, t)| ScreenshotRef {
                    path: format!("{shots_rel}/{}", p.file_name().unwrap().to_string_lossy()),
                    at_seconds: t,
                })
                .collect();
        }
        report.check()?;
        Ok(report)
    }

    fn read_screenshot(&self, shot: &ScreenshotRef) -> Result<ImageBlob, EngineError> {
        let path = self.config.workspace.resolve(&shot.path);
        let bytes = fs::read(&path).map_err(|_| EngineError::MissingFile(path.clone()))?;
        Ok(ImageBlob { media_type: media_type(&path).into(), bytes })
    }

    fn import_mesh(&self, file: &Path) -> Result<EngineAssetRef, EngineError> {
        check_mesh_file(file)?;
        let vars = [("project", self.project()), ("file", file.display().to_string())];
        let mut cmd = Self::expand(&self.config.import_command, &vars)?;
        let child = Self::spawn(&mut cmd, EngineError::ToolchainMissing)?;
        let done = self.finish(child, self.config.build_timeout)?;
        if done.code != Some(0) {
            return Err(EngineError::Unavailable(format!("import failed: {}", done.output.trim())));
        }
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("asset");
        let reference = done
            .output
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("/Game/Imported/{stem}"));
        Ok(EngineAssetRef { reference, source_file: file.display().to_string() })
    }

    fn launch_user_session(&self, source_dir: &Path, layout_path: &Path) -> Result<SessionHandle, EngineError> {
        if !layout_path.is_file() {
            return Err(EngineError::MissingFile(layout_path.to_path_buf()));
        }
        let vars = [
            ("project", self.project()),
            ("source", source_dir.display().to_string()),
            ("layout", layout_path.display().to_string()),
        ];
        let mut cmd = Self::expand(&self.config.session_command, &vars)?;
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
        let child = cmd.spawn().map_err(|e| EngineError::LaunchFailure(e.to_string()))?;
        let pid = child.id();
        self.sessions.lock().unwrap().push(child);
        Ok(SessionHandle {
            session_id: format!("session-{pid}"),
            pid: Some(pid),
            layout_path: layout_path.display().to_string(),
        })
    }

    fn isolates_processes(&self) -> bool {
        self.config.isolates_processes
    }
}

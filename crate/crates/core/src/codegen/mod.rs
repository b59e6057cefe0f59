//! Code-generation submodule: generate actor code and a spawn layout, then
//! compile, place, run and visually check it, feeding stage-specific
//! feedback into the next attempt.

mod bundle;
mod eval;
mod layout;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::{parse_code_files, CodeBundle};
pub use eval::{eval_compile_log, eval_crash_log, eval_placement, eval_visual, excerpt, parse_verdict};
pub use layout::{parse_layout, ActorPlacement, LayoutSpec, PropertyValue};

use crate::assets::AssetRecord;
use crate::engine::{EngineAdapter, EngineError, RunContext, RunOutcome, ScreenshotRef};
use crate::planner::{SubmoduleKind, TaskSpec};
use crate::prompts;
use crate::provider::{AgentRole, CompletionRequest, LanguageModel, ProviderError};

/// Materials and meshes every project starts with.
pub const STARTER_CATALOG: &[&str] = &[
    "/Game/StarterContent/Shapes/Shape_Cube",
    "/Game/StarterContent/Shapes/Shape_Sphere",
    "/Game/StarterContent/Shapes/Shape_Cylinder",
    "/Game/StarterContent/Shapes/Shape_Cone",
    "/Game/StarterContent/Shapes/Shape_Plane",
    "/Game/StarterContent/Props/SM_Rock",
    "/Game/StarterContent/Props/SM_Bush",
    "/Game/StarterContent/Materials/M_Ground_Grass",
    "/Game/StarterContent/Materials/M_Ground_Moss",
    "/Game/StarterContent/Materials/M_Ground_Gravel",
    "/Game/StarterContent/Materials/M_Rock_Basalt",
    "/Game/StarterContent/Materials/M_Water_Lake",
    "/Game/StarterContent/Materials/M_Wood_Oak",
    "/Game/StarterContent/Materials/M_Basic_Wall",
];

/// Pipeline stages in the order an attempt moves through them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Generated,
    Compiled,
    Placed,
    Ran,
    VisuallyEvaluated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Pending,
}

/// Where an evaluation's feedback comes from. `Generation` covers output that
/// could not be used at all, and provider or engine failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceStage {
    Generation,
    Compile,
    Placement,
    Crash,
    Visual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub verdict: Verdict,
    pub feedback: String,
    pub source_stage: SourceStage,
    #[serde(default)]
    pub edited_by_user: bool,
}

impl EvaluationReport {
    pub fn fail(stage: SourceStage, feedback: impl Into<String>) -> Self {
        Self { verdict: Verdict::Fail, feedback: feedback.into(), source_stage: stage, edited_by_user: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineAttempt {
    /// 1-based ordinal within the current attempt budget.
    pub index: u32,
    pub bundle: CodeBundle,
    pub layout: Option<LayoutSpec>,
    pub stage_reached: Stage,
    pub verdict: Verdict,
    pub feedback: String,
    pub screenshots: Vec<ScreenshotRef>,
    /// Set once the bundle has compiled successfully.
    #[serde(default)]
    pub compiled: bool,
}

impl PipelineAttempt {
    fn new(index: u32) -> Self {
        Self {
            index,
            bundle: CodeBundle::default(),
            layout: None,
            stage_reached: Stage::Generated,
            verdict: Verdict::Pending,
            feedback: String::new(),
            screenshots: Vec::new(),
            compiled: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodegenError {
    #[error("no path-annotated code blocks found")]
    NoFilesFound,
    #[error("file path escapes the project: {0}")]
    PathViolation(String),
    #[error("no layout document found")]
    NoLayoutFound,
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("submodule {0:?} is not handled by the code pipeline")]
    UnsupportedSubmodule(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One finished attempt and the evaluation that closed it.
#[derive(Clone, Debug, PartialEq)]
pub struct AttemptRecord {
    pub attempt: PipelineAttempt,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub verdict: Verdict,
    pub attempts: Vec<AttemptRecord>,
}

/// What the previous attempt leaves for the next one.
#[derive(Clone, Copy, Debug)]
pub struct PriorAttempt<'a> {
    pub attempt: &'a PipelineAttempt,
    pub report: &'a EvaluationReport,
}

/// Project state visible to generation prompts.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectContext<'a> {
    pub assets: &'a [AssetRecord],
}

impl ProjectContext<'_> {
    fn asset_lines(&self) -> String {
        if self.assets.is_empty() {
            return "(none yet)".into();
        }
        self.assets
            .iter()
            .map(|a| {
                let path = a.engine_ref.as_deref().unwrap_or(&a.mesh_path);
                format!("- {} ({:?}): {path}", a.display_name, a.origin)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub struct CodePipeline<'a> {
    model: &'a dyn LanguageModel,
    engine: &'a dyn EngineAdapter,
    max_attempts: u32,
}

impl<'a> CodePipeline<'a> {
    pub fn new(model: &'a dyn LanguageModel, engine: &'a dyn EngineAdapter, max_attempts: u32) -> Self {
        Self { model, engine, max_attempts }
    }

    fn kind_of(task: &TaskSpec) -> Result<SubmoduleKind, CodegenError> {
        match SubmoduleKind::from_name(&task.submodule) {
            Some(k @ (SubmoduleKind::CodeGenerator | SubmoduleKind::ProceduralMesh)) => Ok(k),
            _ => Err(CodegenError::UnsupportedSubmodule(task.submodule.clone())),
        }
    }

    /// Runs attempts until one passes or the budget is spent.
    pub fn run_code_task(
        &self,
        task: &TaskSpec,
        project: ProjectContext<'_>,
        run: RunContext,
    ) -> Result<PipelineResult, CodegenError> {
        Self::kind_of(task)?;
        let mut attempts: Vec<AttemptRecord> = Vec::new();
        for index in 1..=self.max_attempts {
            let prior = attempts.last().map(|r| PriorAttempt { attempt: &r.attempt, report: &r.report });
            let record = self.run_attempt(task, project, RunContext { attempt: index, ..run }, index, prior)?;
            let passed = record.report.verdict == Verdict::Pass;
            attempts.push(record);
            if passed {
                return Ok(PipelineResult { verdict: Verdict::Pass, attempts });
            }
        }
        Ok(PipelineResult { verdict: Verdict::Fail, attempts })
    }

    /// The procedural-mesh variant; identical loop, the submodule decides
    /// the prompt and the fixed layout.
    pub fn run_procedural_mesh_task(
        &self,
        task: &TaskSpec,
        project: ProjectContext<'_>,
        run: RunContext,
    ) -> Result<PipelineResult, CodegenError> {
        if Self::kind_of(task)? != SubmoduleKind::ProceduralMesh {
            return Err(CodegenError::UnsupportedSubmodule(task.submodule.clone()));
        }
        self.run_code_task(task, project, run)
    }

    /// One full attempt: every stage up to the first failure. Provider and
    /// engine errors end the attempt with a failing report instead of
    /// propagating. `index` is the attempt's ordinal within the budget;
    /// `run.attempt` only names the capture slot.
    pub fn run_attempt(
        &self,
        task: &TaskSpec,
        project: ProjectContext<'_>,
        run: RunContext,
        index: u32,
        prior: Option<PriorAttempt<'_>>,
    ) -> Result<AttemptRecord, CodegenError> {
        let kind = Self::kind_of(task)?;
        if index == 0 || index > self.max_attempts {
            return Err(CodegenError::PreconditionViolation(format!(
                "attempt {index} is outside 1..={}",
                self.max_attempts
            )));
        }
        let mut attempt = PipelineAttempt::new(index);
        let report = match self.stages(kind, task, project, run, prior, &mut attempt) {
            Ok(report) => report,
            Err(e) => EvaluationReport::fail(SourceStage::Generation, format!("The attempt could not complete: {e}")),
        };
        attempt.verdict = report.verdict;
        attempt.feedback = report.feedback.clone();
        Ok(AttemptRecord { attempt, report })
    }

    fn stages(
        &self,
        kind: SubmoduleKind,
        task: &TaskSpec,
        project: ProjectContext<'_>,
        run: RunContext,
        prior: Option<PriorAttempt<'_>>,
        attempt: &mut PipelineAttempt,
    ) -> Result<EvaluationReport, CodegenError> {
        let task_prompt = task.prompt_text();

        let reply = self.model.complete(&self.generation_request(kind, &task_prompt, project, prior))?.text;
        attempt.bundle = match parse_code_files(&reply) {
            Ok(bundle) => bundle,
            Err(e) => {
                return Ok(EvaluationReport::fail(
                    SourceStage::Generation,
                    format!(
                        "The reply contained no usable source files ({e}). Put every file in a fenced \
                         block starting with \"// FILE: <relative path>\"."
                    ),
                ))
            }
        };

        let compile = self.engine.compile_project(&attempt.bundle)?;
        if !compile.success {
            let mut report = eval_compile_log(self.model, &compile.log, &attempt.bundle, &task_prompt)?;
            if report.verdict != Verdict::Fail {
                // The build did not produce binaries, so there is nothing to run.
                report.verdict = Verdict::Fail;
                if report.feedback.is_empty() {
                    report.feedback = format!("The build failed:\n{}", excerpt(&compile.log));
                }
            }
            return Ok(report);
        }
        attempt.compiled = true;
        attempt.stage_reached = Stage::Compiled;

        let layout = match kind {
            SubmoduleKind::ProceduralMesh => {
                let class = attempt.bundle.primary_actor_class().unwrap_or_else(|| "Actor".into());
                LayoutSpec::single_at_origin(&class)
            }
            _ => {
                let request = self.layout_request(&attempt.bundle, &task_prompt, prior);
                let reply = self.model.complete(&request)?.text;
                match parse_layout(&reply) {
                    Ok(layout) => layout,
                    Err(e) => {
                        return Ok(EvaluationReport::fail(
                            SourceStage::Generation,
                            format!("The layout could not be used ({e}). Reply with one JSON document with an \"actors\" list."),
                        ))
                    }
                }
            }
        };
        attempt.layout = Some(layout.clone());

        let report = self.engine.run_simulation(&layout, run)?;
        match report.outcome {
            RunOutcome::PlacementError => {
                let excerpt = report.placement_log_excerpt.unwrap_or_default();
                return eval_placement(self.model, &excerpt, &attempt.bundle, &layout, &task_prompt);
            }
            RunOutcome::Crashed => {
                attempt.stage_reached = Stage::Placed;
                let crash = report.crash_log.unwrap_or_default();
                return eval_crash_log(self.model, &crash, &attempt.bundle, &layout, &task_prompt);
            }
            RunOutcome::Ran => {}
        }
        attempt.stage_reached = Stage::Ran;
        attempt.screenshots = report.screenshots.clone();

        let images = report
            .screenshots
            .iter()
            .map(|s| self.engine.read_screenshot(s))
            .collect::<Result<Vec<_>, _>>()?;
        let verdict = eval_visual(self.model, images, &report.runtime_log, &attempt.bundle, &layout, &task_prompt)?;
        attempt.stage_reached = Stage::VisuallyEvaluated;
        Ok(verdict)
    }

    fn generation_request(
        &self,
        kind: SubmoduleKind,
        task_prompt: &str,
        project: ProjectContext<'_>,
        prior: Option<PriorAttempt<'_>>,
    ) -> CompletionRequest {
        let exemplar = if kind == SubmoduleKind::ProceduralMesh { prompts::PROCEDURAL_MESH } else { "" };
        let system = prompts::render(
            prompts::CODE_GENERATOR,
            &[
                ("starter_catalog", &STARTER_CATALOG.join("\n")),
                ("project_assets", &project.asset_lines()),
                ("procedural_exemplar", exemplar),
            ],
        );
        let mut user = format!("Task:\n{task_prompt}");
        if let Some(prior) = prior {
            user.push_str(&prior_context(prior));
            user.push_str("\n\nWrite the complete corrected files.");
        }
        CompletionRequest::new(AgentRole::CodeGenerator, system, user)
    }

    fn layout_request(&self, bundle: &CodeBundle, task_prompt: &str, prior: Option<PriorAttempt<'_>>) -> CompletionRequest {
        let mut user = format!("Task:\n{task_prompt}\n\nCompiled code:\n{}", bundle.to_prompt_text());
        if let Some(prior) = prior {
            user.push_str(&prior_context(prior));
        }
        CompletionRequest::new(AgentRole::LayoutGenerator, prompts::LAYOUT_GENERATOR, user)
    }
}

fn prior_context(prior: PriorAttempt<'_>) -> String {
    let mut out = format!("\n\nPrevious attempt ({}):\n", prior.attempt.index);
    if prior.attempt.bundle.is_empty() {
        out.push_str("(no usable code)");
    } else {
        out.push_str(&prior.attempt.bundle.to_prompt_text());
    }
    if let Some(layout) = &prior.attempt.layout {
        out.push_str(&format!("\n\nPrevious layout:\n{}", layout.to_canonical_json()));
    }
    out.push_str(&format!(
        "\n\nFeedback on the previous attempt ({:?}):\n{}",
        prior.report.source_stage, prior.report.feedback
    ));
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::engine::{MockEngine, MockScenario, SCREENSHOT_COUNT};
    use crate::garden::NodeId;
    use crate::provider::ReplayProvider;

    const CODE: &str = "```cpp\n// FILE: Source/Garden/Sheep.h\nclass GARDEN_API ASheep : public AActor\n{\n};\n```";
    const LAYOUT: &str = r#"```json
{"actors":[{"class":"ASheep","position":[0,0,0],"rotation":[0,0,0],"scale":[1,1,1]}]}
```"#;

    fn task(submodule: &str) -> TaskSpec {
        let mut parts = BTreeMap::new();
        parts.insert("actor".to_string(), "A sheep that wanders.".to_string());
        if submodule == "code_generator" {
            parts.insert("spawner".to_string(), "Spawn five sheep.".to_string());
        }
        TaskSpec { leaf_id: NodeId(4), submodule: submodule.into(), prompt_parts: parts, order_index: 0 }
    }

    fn ctx() -> RunContext {
        RunContext { task: NodeId(9), attempt: 1 }
    }

    #[test]
    fn compile_failure_then_pass() {
        let model = ReplayProvider::new()
            .with(AgentRole::CodeGenerator, &[CODE, CODE])
            .with(AgentRole::CompileEvaluator, &["VERDICT: FAIL\nMissing include for AActor."])
            .with(AgentRole::LayoutGenerator, &[LAYOUT])
            .with(AgentRole::VisualEvaluator, &["VERDICT: PASS"]);
        let engine = MockEngine::new(MockScenario::new().compile_fail("error C2504").compile_ok().run_ok());
        let result = CodePipeline::new(&model, &engine, 3)
            .run_code_task(&task("code_generator"), ProjectContext::default(), ctx())
            .unwrap();
        assert_eq!(result.verdict, Verdict::Pass);
        assert_eq!(result.attempts.len(), 2);
        let first = &result.attempts[0];
        assert_eq!(first.report.source_stage, SourceStage::Compile);
        assert_eq!(first.attempt.stage_reached, Stage::Generated);
        let second = &result.attempts[1];
        assert_eq!(second.attempt.stage_reached, Stage::VisuallyEvaluated);
        assert_eq!(second.attempt.screenshots.len(), SCREENSHOT_COUNT);
        let retry = &model.requests_for(AgentRole::CodeGenerator)[1];
        assert!(retry.transcript().contains("Missing include for AActor."));
        assert!(retry.transcript().contains("Spawn five sheep."));
        assert!(retry.transcript().contains("// FILE: Source/Garden/Sheep.h"));
    }

    #[test]
    fn budget_is_enforced() {
        let model = ReplayProvider::new()
            .with(AgentRole::CodeGenerator, &[CODE; 3])
            .with(AgentRole::CompileEvaluator, &["VERDICT: FAIL\nstill broken"; 3]);
        let engine = MockEngine::new(
            MockScenario::new().compile_fail("e1").compile_fail("e2").compile_fail("e3").compile_fail("e4"),
        );
        let result = CodePipeline::new(&model, &engine, 3)
            .run_code_task(&task("code_generator"), ProjectContext::default(), ctx())
            .unwrap();
        assert_eq!(result.verdict, Verdict::Fail);
        assert_eq!(result.attempts.len(), 3);
        assert_eq!(engine.remaining().0, 1);
        assert!(result.attempts.iter().all(|a| !a.attempt.feedback.is_empty()));
    }

    #[test]
    fn procedural_mesh_uses_default_layout() {
        let model = ReplayProvider::new()
            .with(AgentRole::CodeGenerator, &[CODE])
            .with(AgentRole::VisualEvaluator, &["VERDICT: PASS"]);
        let engine = MockEngine::new(MockScenario::new().compile_ok().run_ok());
        let result = CodePipeline::new(&model, &engine, 3)
            .run_procedural_mesh_task(&task("procedural_mesh"), ProjectContext::default(), ctx())
            .unwrap();
        assert_eq!(result.verdict, Verdict::Pass);
        let layout = result.attempts[0].attempt.layout.clone().unwrap();
        assert_eq!(layout, LayoutSpec::single_at_origin("ASheep"));
        assert!(model.requests_for(AgentRole::LayoutGenerator).is_empty());
        assert!(model.requests()[0].system_prompt.contains("ProceduralCube"));
    }

    #[test]
    fn placement_error_feedback_names_class() {
        let bad_layout = LAYOUT.replace("ASheep", "AGoat");
        let model = ReplayProvider::new()
            .with(AgentRole::CodeGenerator, &[CODE])
            .with(AgentRole::LayoutGenerator, &[bad_layout.as_str()])
            .with(AgentRole::PlacementEvaluator, &["VERDICT: FAIL\nAGoat is not defined; use ASheep."]);
        let engine = MockEngine::new(MockScenario::new().compile_ok().run_placement_error());
        let record = CodePipeline::new(&model, &engine, 3)
            .run_attempt(&task("code_generator"), ProjectContext::default(), ctx(), 1, None)
            .unwrap();
        assert_eq!(record.report.source_stage, SourceStage::Placement);
        assert_eq!(record.attempt.stage_reached, Stage::Compiled);
        let sent = model.requests_for(AgentRole::PlacementEvaluator)[0].transcript();
        assert!(sent.contains("'AGoat'"));
    }

    #[test]
    fn provider_errors_fail_the_attempt() {
        let model = ReplayProvider::new();
        let engine = MockEngine::new(MockScenario::new());
        let record = CodePipeline::new(&model, &engine, 3)
            .run_attempt(&task("code_generator"), ProjectContext::default(), ctx(), 1, None)
            .unwrap();
        assert_eq!(record.report.verdict, Verdict::Fail);
        assert_eq!(record.report.source_stage, SourceStage::Generation);
        assert!(record.report.feedback.contains("exhausted"));
    }

    #[test]
    fn rejects_asset_submodules() {
        let model = ReplayProvider::new();
        let engine = MockEngine::new(MockScenario::new());
        let mut t = task("code_generator");
        t.submodule = "mesh_downloader".into();
        assert!(matches!(
            CodePipeline::new(&model, &engine, 3).run_code_task(&t, ProjectContext::default(), ctx()),
            Err(CodegenError::UnsupportedSubmodule(_))
        ));
    }
}

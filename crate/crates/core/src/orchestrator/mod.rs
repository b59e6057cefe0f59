//! The control loop: pops the frontier, dispatches work to the planner and
//! the submodules, and applies user edits with cascade invalidation.

mod cascade;
mod record;
mod view;
mod worker;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cascade::{plan_edit, EditPlan};
pub use view::{excerpt_text, ApiGardenView, ConfigSummary, NodeDetail, NodeView, EXCERPT_CHARS};
pub use worker::GardenHandle;

use record::{CallRecorder, RecordingEngine, RecordingModel};

use crate::assets::{
    generate_mesh_chain, retrieve_nearest_asset, AssetFailure, AssetIndex, AssetOutcome, AssetRegistry, AssetSource,
    AssetStage,
    EmbeddingProvider, HashingEmbedder, ImageToMesh, LocalFileSource, TextToImage,
};
use crate::codegen::{CodePipeline, EvaluationReport, PipelineAttempt, PriorAttempt, ProjectContext, Verdict};
use crate::engine::{EngineAdapter, EngineError, RunContext, SessionHandle, Workspace};
use crate::garden::{
    FrontierItem, Garden, GardenConfig, GardenError, GardenNode, Mode, NodeId, NodeKind, NodeStatus, Payload,
};
use crate::persistence::{
    replay_events, Actor, BackupBundle, EngineOp, EventLog, EventPayload, GardenEvent, GardenState, PersistenceError,
};
use crate::planner::{Planner, PlannerOptions, SubmoduleKind, TaskSpec};
use crate::provider::{AgentRole, LanguageModel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserEdit {
    ToggleLeaf {
        target: NodeId,
        is_leaf: bool,
        #[serde(default)]
        submodule: Option<String>,
    },
    EditNodeText {
        target: NodeId,
        text: String,
    },
    EditFeedback {
        target: NodeId,
        feedback: String,
    },
    SetMode {
        mode: Mode,
    },
    CompileAndRunAt {
        target: NodeId,
    },
}

impl UserEdit {
    pub fn target(&self) -> Option<NodeId> {
        match self {
            UserEdit::ToggleLeaf { target, .. }
            | UserEdit::EditNodeText { target, .. }
            | UserEdit::EditFeedback { target, .. }
            | UserEdit::CompileAndRunAt { target } => Some(*target),
            UserEdit::SetMode { .. } => None,
        }
    }

    /// Short human-readable reference stored with backups.
    pub fn describe(&self) -> String {
        match self {
            UserEdit::ToggleLeaf { target, is_leaf, .. } => format!("toggle_leaf {target} -> {is_leaf}"),
            UserEdit::EditNodeText { target, .. } => format!("edit_node_text {target}"),
            UserEdit::EditFeedback { target, .. } => format!("edit_feedback {target}"),
            UserEdit::SetMode { mode } => format!("set_mode {mode:?}"),
            UserEdit::CompileAndRunAt { target } => format!("compile_and_run_at {target}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidationSet {
    pub removed: BTreeSet<NodeId>,
    pub reason: String,
    pub backup_ref: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub invalidation: InvalidationSet,
    pub session: Option<SessionHandle>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "item", rename_all = "snake_case")]
pub enum StepOutcome {
    Worked(FrontierItem),
    Idle,
    Paused,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("kind violation: {0}")]
    KindViolation(String),
    #[error("malformed edit: {0}")]
    MalformedEdit(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{0} has no compiled code and layout snapshot")]
    SnapshotMissing(NodeId),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Persistence(PersistenceError),
    #[error(transparent)]
    Garden(GardenError),
    #[error("io error: {0}")]
    Io(String),
    #[error("garden worker has stopped")]
    WorkerGone,
}

impl From<GardenError> for OrchestratorError {
    fn from(e: GardenError) -> Self {
        match e {
            GardenError::UnknownNode(id) | GardenError::UnknownParent(id) => OrchestratorError::UnknownNode(id),
            GardenError::KindViolation(msg) => OrchestratorError::KindViolation(msg),
            GardenError::LeafViolation(msg) => OrchestratorError::Precondition(msg),
            GardenError::EmptyText => OrchestratorError::MalformedEdit("text must not be empty".into()),
            other => OrchestratorError::Garden(other),
        }
    }
}

impl From<PersistenceError> for OrchestratorError {
    fn from(e: PersistenceError) -> Self {
        match e {
            PersistenceError::Garden(g) => g.into(),
            other => OrchestratorError::Persistence(other),
        }
    }
}

impl From<std::io::Error> for OrchestratorError {
    fn from(e: std::io::Error) -> Self {
        OrchestratorError::Io(e.to_string())
    }
}

/// Fails every request; stands in for generation services nobody configured.
#[derive(Clone, Copy, Debug, Default)]
pub struct Unconfigured;

impl TextToImage for Unconfigured {
    fn generate(&self, _prompt: &str) -> Result<Vec<u8>, String> {
        Err("no text-to-image service configured".into())
    }
}

impl ImageToMesh for Unconfigured {
    fn convert(&self, _image: &[u8]) -> Result<Vec<u8>, String> {
        Err("no image-to-mesh service configured".into())
    }
}

/// External collaborators of one garden.
#[derive(Clone)]
pub struct Services {
    pub model: Arc<dyn LanguageModel>,
    pub engine: Arc<dyn EngineAdapter>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub asset_index: Option<Arc<AssetIndex>>,
    pub asset_source: Arc<dyn AssetSource>,
    pub text_to_image: Arc<dyn TextToImage>,
    pub image_to_mesh: Arc<dyn ImageToMesh>,
    pub planner: PlannerOptions,
}

impl Services {
    pub fn new(model: Arc<dyn LanguageModel>, engine: Arc<dyn EngineAdapter>) -> Self {
        Self {
            model,
            engine,
            embedder: Arc::new(HashingEmbedder::new(32)),
            asset_index: None,
            asset_source: Arc::new(LocalFileSource::new(".")),
            text_to_image: Arc::new(Unconfigured),
            image_to_mesh: Arc::new(Unconfigured),
            planner: PlannerOptions::default(),
        }
    }
}

/// How many scripted responses and engine results a log has used up, so a
/// resumed replay run can skip them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConsumedCalls {
    pub provider: BTreeMap<AgentRole, usize>,
    pub engine: BTreeMap<EngineOp, usize>,
}

pub fn consumed_calls(events: &[GardenEvent]) -> ConsumedCalls {
    let mut out = ConsumedCalls::default();
    for event in events {
        match &event.payload {
            EventPayload::ProviderCall { call } if call.consumed => {
                *out.provider.entry(call.role).or_default() += 1;
            }
            EventPayload::EngineCall { call } if call.consumed => {
                *out.engine.entry(call.op).or_default() += 1;
            }
            _ => {}
        }
    }
    out
}

type Observer = Box<dyn FnMut(&GardenEvent) + Send>;

/// Single-writer owner of one garden. Every change goes through an event.
pub struct Orchestrator {
    state: GardenState,
    log: EventLog,
    workspace: Workspace,
    services: Services,
    observer: Option<Observer>,
}

impl Orchestrator {
    /// Starts a new garden in `workspace`, writing `events.log` and
    /// `garden.json` there.
    pub fn create(
        workspace: Workspace,
        garden_id: &str,
        config: GardenConfig,
        services: Services,
    ) -> Result<Self, OrchestratorError> {
        workspace.ensure()?;
        let log = EventLog::open(&workspace.events_file())?;
        if !log.is_empty() {
            return Err(OrchestratorError::Precondition(format!(
                "{} already holds a garden",
                workspace.root().display()
            )));
        }
        Self::start(workspace, log, garden_id, config, services)
    }

    /// A garden whose log lives only in memory. Workspace files (assets,
    /// screenshots) are still written under `workspace`.
    pub fn in_memory(
        workspace: Workspace,
        garden_id: &str,
        config: GardenConfig,
        services: Services,
    ) -> Result<Self, OrchestratorError> {
        Self::start(workspace, EventLog::in_memory(), garden_id, config, services)
    }

    /// An in-memory garden seeded with an existing graph and registry, e.g.
    /// one loaded from `garden.json`. Nodes are added parents-first.
    pub fn in_memory_from(
        workspace: Workspace,
        garden_id: &str,
        garden: &Garden,
        registry: &AssetRegistry,
        services: Services,
    ) -> Result<Self, OrchestratorError> {
        let mut orch = Self::in_memory(workspace, garden_id, garden.config().clone(), services)?;
        if let Some(seed) = garden.seed() {
            let mut order = vec![seed];
            order.extend(garden.descendants(seed)?);
            for id in order {
                let node = garden.node(id)?.clone();
                orch.emit(Actor::System, EventPayload::NodeAdded { node })?;
            }
        }
        for record in registry.records() {
            orch.emit(Actor::System, EventPayload::AssetRegistered { record: record.clone() })?;
        }
        if garden.mode() != orch.mode() {
            orch.emit(Actor::System, EventPayload::ModeChanged { mode: garden.mode() })?;
        }
        Ok(orch)
    }

    fn start(
        workspace: Workspace,
        log: EventLog,
        garden_id: &str,
        config: GardenConfig,
        services: Services,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let mut orch = Self { state: GardenState::empty(), log, workspace, services, observer: None };
        orch.emit(Actor::User, EventPayload::GardenCreated { garden_id: garden_id.to_string(), config })?;
        orch.persist()?;
        Ok(orch)
    }

    /// Reopens a workspace by replaying its event log.
    pub fn open(workspace: Workspace, services: Services) -> Result<Self, OrchestratorError> {
        let log = EventLog::open(&workspace.events_file())?;
        if log.is_empty() {
            return Err(OrchestratorError::Precondition(format!(
                "{} holds no garden",
                workspace.root().display()
            )));
        }
        let state = replay_events(log.events())?;
        let orch = Self { state, log, workspace, services, observer: None };
        orch.persist()?;
        Ok(orch)
    }

    /// Called with every event right after it is appended.
    pub fn set_observer(&mut self, observer: impl FnMut(&GardenEvent) + Send + 'static) {
        self.observer = Some(Box::new(observer));
    }

    pub fn state(&self) -> &GardenState {
        &self.state
    }

    pub fn garden(&self) -> &Garden {
        self.state.garden().expect("garden is created on construction")
    }

    pub fn events(&self) -> &[GardenEvent] {
        self.log.events()
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn mode(&self) -> Mode {
        self.garden().mode()
    }

    fn emit(&mut self, actor: Actor, payload: EventPayload) -> Result<(), OrchestratorError> {
        self.state.apply(&payload)?;
        let event = self.log.append(actor, payload)?;
        if let Some(observer) = &mut self.observer {
            observer(event);
        }
        Ok(())
    }

    fn emit_all(&mut self, actor: Actor, payloads: Vec<EventPayload>) -> Result<(), OrchestratorError> {
        payloads.into_iter().try_for_each(|p| self.emit(actor, p))
    }

    /// Rewrites `garden.json` when the log is on disk.
    fn persist(&self) -> Result<(), OrchestratorError> {
        if self.log.path().is_none() {
            return Ok(());
        }
        let doc = self.state.document().expect("garden exists");
        let path = self.workspace.garden_file();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, doc)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn update(&mut self, actor: Actor, id: NodeId, change: impl FnOnce(&mut GardenNode)) -> Result<(), OrchestratorError> {
        let mut node = self.garden().node(id)?.clone();
        change(&mut node);
        if &node != self.garden().node(id)? {
            self.emit(actor, EventPayload::NodeUpdated { node })?;
        }
        Ok(())
    }

    fn set_status(&mut self, id: NodeId, status: NodeStatus) -> Result<(), OrchestratorError> {
        self.update(Actor::System, id, |n| n.status = status)
    }

    pub fn seed(&mut self, text: &str) -> Result<NodeId, OrchestratorError> {
        if self.garden().seed().is_some() {
            return Err(OrchestratorError::Precondition("garden is already seeded".into()));
        }
        let mut scratch = self.garden().clone();
        let id = scratch.add_seed(text)?;
        let node = scratch.node(id)?.clone();
        self.emit(Actor::User, EventPayload::NodeAdded { node })?;
        self.persist()?;
        Ok(id)
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<(), OrchestratorError> {
        if self.mode() != mode {
            self.emit(Actor::User, EventPayload::ModeChanged { mode })?;
            self.persist()?;
        }
        Ok(())
    }

    /// Performs the highest-priority unit of work. Failures inside the unit
    /// are recorded on the nodes; only storage errors surface here.
    pub fn step(&mut self) -> Result<StepOutcome, OrchestratorError> {
        if self.mode() == Mode::Paused {
            return Ok(StepOutcome::Paused);
        }
        let Some(item) = self.garden().compute_frontier().first().copied() else {
            return Ok(StepOutcome::Idle);
        };
        self.emit(Actor::System, EventPayload::WorkStarted { item })?;
        match item {
            FrontierItem::Expand(id) => self.expand(id)?,
            FrontierItem::GenerateTask(leaf) => self.generate_task(leaf)?,
            FrontierItem::Implement(task) => self.implement(task)?,
        }
        self.emit(Actor::System, EventPayload::WorkFinished { item })?;
        self.persist()?;
        Ok(StepOutcome::Worked(item))
    }

    /// Steps until the frontier is empty or the mode leaves Play. Returns
    /// the number of units performed.
    pub fn run_until_idle(&mut self, max_units: usize) -> Result<usize, OrchestratorError> {
        let mut units = 0;
        while units < max_units {
            match self.step()? {
                StepOutcome::Worked(_) => units += 1,
                StepOutcome::Idle | StepOutcome::Paused => break,
            }
        }
        Ok(units)
    }

    fn expand(&mut self, id: NodeId) -> Result<(), OrchestratorError> {
        let recorder = CallRecorder::default();
        let result = {
            let model = RecordingModel::new(self.services.model.as_ref(), &recorder);
            let planner = Planner::new(&model, &self.services.planner);
            planner.expand_plan_node(self.garden(), id)
        };
        self.emit_all(Actor::System, recorder.take())?;

        // Children are built on a scratch copy so a rejected child leaves
        // no partial expansion behind.
        let built = result.map_err(|e| e.to_string()).and_then(|expansion| {
            let mut scratch = self.garden().clone();
            let mut children = Vec::with_capacity(expansion.steps.len());
            for step in &expansion.steps {
                let submodule = step.marker.as_ref().map(|m| m.submodule.as_str());
                let node = scratch
                    .prepare_child(id, NodeKind::PlanStep, &step.text, submodule.is_some(), submodule)
                    .map_err(|e| e.to_string())?;
                scratch.insert_node(node.clone()).map_err(|e| e.to_string())?;
                children.push(node);
            }
            Ok((expansion.detail, children))
        });
        match built {
            Ok((detail, children)) => {
                for node in children {
                    self.emit(Actor::System, EventPayload::NodeAdded { node })?;
                }
                self.update(Actor::System, id, |n| {
                    n.status = NodeStatus::Succeeded;
                    if !detail.trim().is_empty() {
                        n.payload = Payload::Detail(detail);
                    }
                })
            }
            Err(message) => self.update(Actor::System, id, |n| {
                n.status = NodeStatus::Failed;
                n.payload = Payload::Detail(format!("expansion failed: {message}"));
            }),
        }
    }

    fn generate_task(&mut self, leaf: NodeId) -> Result<(), OrchestratorError> {
        let recorder = CallRecorder::default();
        let (assigned, result) = {
            let model = RecordingModel::new(self.services.model.as_ref(), &recorder);
            let planner = Planner::new(&model, &self.services.planner);
            let garden = self.garden();
            let node = garden.node(leaf)?;
            if node.assigned_submodule.is_some() {
                (None, planner.generate_task(garden, leaf).map_err(|e| e.to_string()))
            } else {
                match planner.assign_submodule(garden.config(), &node.text) {
                    Ok(marker) => {
                        let updated = GardenNode { assigned_submodule: Some(marker.submodule), ..node.clone() };
                        let mut scratch = garden.clone();
                        scratch.update_node(updated.clone())?;
                        (Some(updated), planner.generate_task(&scratch, leaf).map_err(|e| e.to_string()))
                    }
                    Err(e) => (None, Err(format!("no submodule could be assigned: {e}"))),
                }
            }
        };
        self.emit_all(Actor::System, recorder.take())?;
        if let Some(node) = assigned {
            self.emit(Actor::System, EventPayload::NodeUpdated { node })?;
        }
        match result {
            Ok(spec) => {
                let mut node = self.garden().prepare_child(leaf, NodeKind::Task, &spec.prompt_text(), false, None)?;
                node.payload = Payload::Task(spec);
                self.emit(Actor::System, EventPayload::NodeAdded { node })?;
                self.set_status(leaf, NodeStatus::Succeeded)
            }
            Err(message) => self.update(Actor::System, leaf, |n| {
                n.status = NodeStatus::Failed;
                n.payload = Payload::Detail(format!("task generation failed: {message}"));
            }),
        }
    }

    fn implement(&mut self, task: NodeId) -> Result<(), OrchestratorError> {
        let node = self.garden().node(task)?;
        let Payload::Task(spec) = &node.payload else {
            return self.set_status(task, NodeStatus::Failed);
        };
        let spec = spec.clone();
        self.set_status(task, NodeStatus::InProgress)?;
        match SubmoduleKind::from_name(&spec.submodule) {
            Some(SubmoduleKind::CodeGenerator | SubmoduleKind::ProceduralMesh) => self.code_attempt(task, &spec),
            Some(kind @ (SubmoduleKind::MeshDownloader | SubmoduleKind::DiffusionMesh)) => {
                self.asset_task(task, &spec, kind)
            }
            None => self.set_status(task, NodeStatus::Failed),
        }
    }

    /// The last attempt and evaluation of a chain, if the chain ends in an
    /// evaluation.
    fn last_attempt(&self, task: NodeId) -> Option<(PipelineAttempt, EvaluationReport)> {
        let garden = self.garden();
        let chain = garden.chain(task);
        let eval = garden.get(*chain.last()?)?;
        let attempt = garden.get(eval.parent?)?;
        match (&attempt.payload, &eval.payload) {
            (Payload::Attempt(a), Payload::Evaluation(r)) => Some((a.clone(), r.clone())),
            _ => None,
        }
    }

    /// One full code attempt: a CodeAttempt node and its Evaluation.
    fn code_attempt(&mut self, task: NodeId, spec: &TaskSpec) -> Result<(), OrchestratorError> {
        let max = self.garden().config().max_code_attempts;
        let prior = self.last_attempt(task);
        // A user-edited evaluation opens a fresh attempt budget.
        let index = match &prior {
            None => 1,
            Some((_, report)) if report.edited_by_user => 1,
            Some((attempt, _)) => attempt.index + 1,
        };
        if index > max {
            return self.set_status(task, NodeStatus::Failed);
        }
        let tail = self.garden().chain(task).last().copied().unwrap_or(task);
        let slot = self.garden().next_id();

        let recorder = CallRecorder::default();
        let result = {
            let model = RecordingModel::new(self.services.model.as_ref(), &recorder);
            let engine = RecordingEngine::new(self.services.engine.as_ref(), &recorder, Some(task));
            let pipeline = CodePipeline::new(&model, &engine, max);
            let project = ProjectContext { assets: self.state.registry().records() };
            let prior = prior.as_ref().map(|(attempt, report)| PriorAttempt { attempt, report });
            pipeline.run_attempt(spec, project, RunContext { task, attempt: slot.0 as u32 }, index, prior)
        };
        self.emit_all(Actor::System, recorder.take())?;
        let record = match result {
            Ok(record) => record,
            Err(_) => return self.set_status(task, NodeStatus::Failed),
        };

        let passed = record.report.verdict == Verdict::Pass;
        let status = if passed { NodeStatus::Succeeded } else { NodeStatus::Failed };
        let mut attempt_node = self.garden().prepare_child(
            tail,
            NodeKind::CodeAttempt,
            &format!("Attempt {index}: reached {:?}", record.attempt.stage_reached),
            false,
            None,
        )?;
        attempt_node.status = status;
        attempt_node.payload = Payload::Attempt(record.attempt);
        let attempt_id = attempt_node.id;
        self.emit(Actor::System, EventPayload::NodeAdded { node: attempt_node })?;

        let text = if record.report.feedback.trim().is_empty() {
            format!("{:?}", record.report.verdict)
        } else {
            record.report.feedback.clone()
        };
        let mut eval_node = self.garden().prepare_child(attempt_id, NodeKind::Evaluation, &text, false, None)?;
        eval_node.status = status;
        eval_node.payload = Payload::Evaluation(record.report);
        self.emit(Actor::System, EventPayload::NodeAdded { node: eval_node })?;

        let task_status = match (passed, index >= max) {
            (true, _) => NodeStatus::Succeeded,
            (false, true) => NodeStatus::Failed,
            (false, false) => NodeStatus::InProgress,
        };
        self.set_status(task, task_status)
    }

    fn asset_task(&mut self, task: NodeId, spec: &TaskSpec, kind: SubmoduleKind) -> Result<(), OrchestratorError> {
        let query = spec.part("description").trim().to_string();
        let tail = self.garden().chain(task).last().copied().unwrap_or(task);
        let slot = self.garden().next_id();

        let recorder = CallRecorder::default();
        let result = {
            let s = &self.services;
            let engine = RecordingEngine::new(s.engine.as_ref(), &recorder, Some(task));
            let registry = self.state.registry();
            match kind {
                SubmoduleKind::MeshDownloader => match &s.asset_index {
                    Some(index) => retrieve_nearest_asset(
                        &query,
                        index,
                        s.embedder.as_ref(),
                        s.asset_source.as_ref(),
                        &engine,
                        &self.workspace,
                        registry,
                        slot,
                    ),
                    None => Err(AssetFailure { stage: AssetStage::Retrieve, message: "no asset index configured".into() }),
                },
                _ => generate_mesh_chain(
                    &query,
                    s.text_to_image.as_ref(),
                    s.image_to_mesh.as_ref(),
                    &engine,
                    &self.workspace,
                    registry,
                    slot,
                    &format!("gen-{task}"),
                )
                .map(|record| (record, false)),
            }
        };
        self.emit_all(Actor::System, recorder.take())?;

        let (outcome, text, register) = match result {
            Ok((record, reused)) => {
                let message = if reused {
                    format!("reused {}", record.asset_id)
                } else {
                    format!("imported as {}", record.engine_ref.as_deref().unwrap_or(&record.mesh_path))
                };
                let text = record.display_name.clone();
                let register = (!reused).then(|| record.clone());
                (AssetOutcome { query, record: Some(record), reused, failed_stage: None, message }, text, register)
            }
            Err(failure) => {
                let text = failure.to_string();
                let outcome =
                    AssetOutcome { query, record: None, reused: false, failed_stage: Some(failure.stage), message: failure.message };
                (outcome, text, None)
            }
        };
        let status = if outcome.record.is_some() { NodeStatus::Succeeded } else { NodeStatus::Failed };
        let mut node = self.garden().prepare_child(tail, NodeKind::AssetArtifact, &text, false, None)?;
        debug_assert_eq!(node.id, slot);
        node.status = status;
        node.payload = Payload::Asset(outcome);
        self.emit(Actor::System, EventPayload::NodeAdded { node })?;
        if let Some(record) = register {
            self.emit(Actor::System, EventPayload::AssetRegistered { record })?;
        }
        self.set_status(task, status)
    }

    /// Applies a user edit between work units.
    pub fn apply_edit(&mut self, edit: UserEdit) -> Result<EditOutcome, OrchestratorError> {
        match &edit {
            UserEdit::SetMode { mode } => {
                self.set_mode(*mode)?;
                return Ok(EditOutcome::default());
            }
            UserEdit::CompileAndRunAt { target } => {
                let session = self.compile_and_run_at(*target)?;
                return Ok(EditOutcome { invalidation: InvalidationSet::default(), session: Some(session) });
            }
            _ => {}
        }
        let plan = plan_edit(self.garden(), &edit)?;
        let reason = edit.describe();
        if plan.is_noop() {
            self.emit(Actor::User, EventPayload::EditApplied { edit, removed: Vec::new(), backup_id: None })?;
            self.persist()?;
            return Ok(EditOutcome {
                invalidation: InvalidationSet { removed: BTreeSet::new(), reason, backup_ref: None },
                session: None,
            });
        }

        let garden = self.garden();
        let nodes = plan.removed.iter().map(|id| garden.node(*id).cloned()).collect::<Result<Vec<_>, _>>()?;
        let modified = plan.modified.iter().map(|n| garden.node(n.id).cloned()).collect::<Result<Vec<_>, _>>()?;
        let assets: Vec<_> = self
            .state
            .registry()
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.origin_node.is_some_and(|n| plan.removed.contains(&n)))
            .map(|(pos, r)| (pos, r.clone()))
            .collect();
        let backup_id = format!("backup-{:06}", self.log.next_seq());
        let backup = BackupBundle { backup_id: backup_id.clone(), edit_ref: reason.clone(), nodes, modified, assets };
        if self.log.path().is_some() {
            backup.save(&self.workspace)?;
        }
        let retracted: Vec<String> = backup.assets.iter().map(|(_, r)| r.asset_id.clone()).collect();
        self.emit(Actor::User, EventPayload::BackupCreated { backup })?;
        for asset_id in retracted {
            self.emit(Actor::User, EventPayload::AssetRetracted { asset_id, backup_id: backup_id.clone() })?;
        }
        for id in plan.removed.iter().rev() {
            self.emit(Actor::User, EventPayload::NodeDeleted { id: *id, backup_id: backup_id.clone() })?;
        }
        for node in plan.modified.iter().cloned() {
            self.emit(Actor::User, EventPayload::NodeUpdated { node })?;
        }
        self.emit(
            Actor::User,
            EventPayload::EditApplied { edit, removed: plan.removed.clone(), backup_id: Some(backup_id.clone()) },
        )?;
        self.persist()?;
        Ok(EditOutcome {
            invalidation: InvalidationSet { removed: plan.removed_set(), reason, backup_ref: Some(backup_id) },
            session: None,
        })
    }

    /// Puts back everything a backup holds.
    pub fn restore_backup(&mut self, backup_id: &str) -> Result<(), OrchestratorError> {
        if self.state.backup(backup_id).is_none() {
            return Err(PersistenceError::UnknownBackup(backup_id.to_string()).into());
        }
        self.emit(Actor::User, EventPayload::BackupRestored { backup_id: backup_id.to_string() })?;
        self.persist()
    }

    /// Materializes the code and layout of a compiled attempt and launches a
    /// user-facing engine session on it. The backend pauses when the engine
    /// cannot keep that session apart from its own runs.
    pub fn compile_and_run_at(&mut self, target: NodeId) -> Result<SessionHandle, OrchestratorError> {
        let garden = self.garden();
        let node = garden.node(target)?;
        let attempt_node = match node.kind {
            NodeKind::CodeAttempt => node,
            NodeKind::Evaluation => garden.node(node.parent.ok_or(OrchestratorError::SnapshotMissing(target))?)?,
            _ => return Err(OrchestratorError::SnapshotMissing(target)),
        };
        let Payload::Attempt(attempt) = &attempt_node.payload else {
            return Err(OrchestratorError::SnapshotMissing(target));
        };
        let (true, Some(layout)) = (attempt.compiled, attempt.layout.as_ref()) else {
            return Err(OrchestratorError::SnapshotMissing(target));
        };
        let dir = self.workspace.session_dir(attempt_node.id);
        let source = dir.join("source");
        let layout_path = dir.join("layout.json");
        Workspace::write_bundle(&source, &attempt.bundle)?;
        Workspace::write_layout(&layout_path, layout)?;
        if Workspace::read_bundle(&source)?.content_hash() != attempt.bundle.content_hash() {
            return Err(EngineError::Io(format!("materialized code in {} does not match the snapshot", source.display())).into());
        }

        let recorder = CallRecorder::default();
        let result = RecordingEngine::new(self.services.engine.as_ref(), &recorder, None)
            .launch_user_session(&source, &layout_path);
        self.emit_all(Actor::User, recorder.take())?;
        let session = result?;
        if !self.services.engine.isolates_processes() && self.mode() != Mode::Paused {
            self.emit(Actor::System, EventPayload::ModeChanged { mode: Mode::Paused })?;
        }
        self.emit(
            Actor::User,
            EventPayload::EditApplied { edit: UserEdit::CompileAndRunAt { target }, removed: Vec::new(), backup_id: None },
        )?;
        self.persist()?;
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{MockEngine, MockScenario};
    use crate::provider::ReplayProvider;

    fn services(model: ReplayProvider, engine: MockEngine) -> Services {
        Services::new(Arc::new(model), Arc::new(engine))
    }

    #[test]
    fn edit_json_shape() {
        let edit: UserEdit = serde_json::from_str(r#"{"kind":"toggle_leaf","target":4,"is_leaf":true}"#).unwrap();
        assert_eq!(edit, UserEdit::ToggleLeaf { target: NodeId(4), is_leaf: true, submodule: None });
        let back = serde_json::to_string(&UserEdit::SetMode { mode: Mode::Play }).unwrap();
        assert_eq!(back, r#"{"kind":"set_mode","mode":"play"}"#);
    }

    #[test]
    fn empty_frontier_is_idle() {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = Orchestrator::in_memory(
            Workspace::new(dir.path()),
            "g",
            GardenConfig::default(),
            services(ReplayProvider::new(), MockEngine::new(MockScenario::new())),
        )
        .unwrap();
        let before = orch.events().len();
        assert_eq!(orch.step().unwrap(), StepOutcome::Idle);
        assert_eq!(orch.events().len(), before);
        orch.set_mode(Mode::Paused).unwrap();
        orch.seed("a pond").unwrap();
        assert_eq!(orch.step().unwrap(), StepOutcome::Paused);
    }

    #[test]
    fn seed_then_expand() {
        let dir = tempfile::tempdir().unwrap();
        let model = ReplayProvider::new().with(
            AgentRole::BroadPlanner,
            &["OUTLINE: a pond\n1. Dig the pond basin\n2. Fill it with water\n3. Add reeds"],
        );
        let mut orch = Orchestrator::create(
            Workspace::new(dir.path()),
            "g",
            GardenConfig::default(),
            services(model, MockEngine::new(MockScenario::new())),
        )
        .unwrap();
        let seed = orch.seed("a quiet pond").unwrap();
        assert_eq!(orch.step().unwrap(), StepOutcome::Worked(FrontierItem::Expand(seed)));
        let garden = orch.garden();
        assert_eq!(garden.children(seed).len(), 3);
        assert_eq!(garden.node(seed).unwrap().status, NodeStatus::Succeeded);
        let reopened = Orchestrator::open(
            Workspace::new(dir.path()),
            services(ReplayProvider::new(), MockEngine::new(MockScenario::new())),
        )
        .unwrap();
        assert_eq!(reopened.state(), orch.state());
        assert!(dir.path().join("garden.json").is_file());
    }
}

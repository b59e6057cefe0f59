//! Grows a project from a one-line seed: a planner expands the seed into a
//! bounded tree of plan steps, leaves become tasks for implementation
//! submodules (code generation, procedural meshes, asset retrieval and
//! generation), and a single worker drives the whole garden while users
//! step, play, pause and edit it.
//!
//! Every change is an event in an append-only log, so a garden can always be
//! rebuilt by replaying it.

pub mod assets;
pub mod codegen;
pub mod engine;
pub mod garden;
pub mod orchestrator;
pub mod persistence;
pub mod planner;
pub mod prompts;
pub mod provider;

pub use assets::{AssetIndex, AssetOrigin, AssetRecord, AssetRegistry, EmbeddingProvider, EmbeddingVector};
pub use codegen::{CodeBundle, EvaluationReport, LayoutSpec, PipelineAttempt, Stage, Verdict};
pub use engine::{EngineAdapter, MockEngine, MockScenario, ProcessEngine, RunOutcome, Workspace};
pub use garden::{
    FrontierItem, Garden, GardenConfig, GardenError, GardenNode, Mode, NodeId, NodeKind, NodeStatus, Payload,
};
pub use orchestrator::{
    ApiGardenView, EditOutcome, GardenHandle, InvalidationSet, Orchestrator, OrchestratorError, Services,
    StepOutcome, UserEdit,
};
pub use persistence::{Actor, EventPayload, GardenEvent, GardenState};
pub use planner::{Planner, PlannerOptions, SubmoduleKind, TaskSpec};
pub use provider::{AgentRole, LanguageModel, LiveProvider, ReplayProvider};

//! Broad planning, breadth-first sub-planning with leaf flagging, and
//! translation of leaves into submodule task inputs.

mod parse;
mod render;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    parse_assignment, parse_leaf_marker, parse_plan, parse_sections, strip_leaf_marker, PlanParse,
};
pub use render::{render_plan_tree, EXPAND_TAG};

use crate::garden::{Garden, GardenConfig, GardenError, NodeId, NodeKind, NodeStatus, Payload, SubmoduleDescriptor};
use crate::prompts;
use crate::provider::{AgentRole, CompletionRequest, LanguageModel, ProviderError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafMarker {
    pub submodule: String,
}

pub fn render_leaf_marker(submodule: &str) -> String {
    format!("[LEAF: {submodule}]")
}

/// Concrete input for one implementation submodule, derived from a leaf.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub leaf_id: NodeId,
    pub submodule: String,
    pub prompt_parts: BTreeMap<String, String>,
    /// Position of the leaf in the global task order when the task was made.
    pub order_index: usize,
}

impl TaskSpec {
    pub fn part(&self, key: &str) -> &str {
        self.prompt_parts.get(key).map(String::as_str).unwrap_or_default()
    }

    /// All parts concatenated under their headings.
    pub fn prompt_text(&self) -> String {
        self.prompt_parts
            .iter()
            .map(|(k, v)| format!("{}:\n{v}", k.to_ascii_uppercase()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// The executors this crate knows how to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmoduleKind {
    CodeGenerator,
    ProceduralMesh,
    DiffusionMesh,
    MeshDownloader,
}

impl SubmoduleKind {
    pub const ALL: [SubmoduleKind; 4] = [
        SubmoduleKind::CodeGenerator,
        SubmoduleKind::ProceduralMesh,
        SubmoduleKind::DiffusionMesh,
        SubmoduleKind::MeshDownloader,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubmoduleKind::CodeGenerator => "code_generator",
            SubmoduleKind::ProceduralMesh => "procedural_mesh",
            SubmoduleKind::DiffusionMesh => "diffusion_mesh",
            SubmoduleKind::MeshDownloader => "mesh_downloader",
        }
    }

    pub fn from_name(name: &str) -> Option<SubmoduleKind> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name.trim()))
    }

    /// Section names the task generator must produce for this submodule.
    pub fn schema(self) -> &'static [&'static str] {
        match self {
            SubmoduleKind::CodeGenerator => &["actor", "spawner"],
            SubmoduleKind::ProceduralMesh => &["actor"],
            SubmoduleKind::DiffusionMesh | SubmoduleKind::MeshDownloader => &["description"],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SubmoduleKind::CodeGenerator => {
                "Writes C++ Actor classes plus an initial level layout of their instances, then compiles, \
                 runs and visually checks the result. Suited to gameplay logic, behaviours, spawners and scene set-up."
            }
            SubmoduleKind::ProceduralMesh => {
                "Writes a C++ Actor that builds a procedural mesh in code (terrain, structures, simple \
                 geometry). One instance is placed at the origin for inspection."
            }
            SubmoduleKind::DiffusionMesh => {
                "Creates a new textured 3D mesh from a detailed description by chaining a text-to-image \
                 model with an image-to-3D model."
            }
            SubmoduleKind::MeshDownloader => {
                "Retrieves an existing handmade 3D model of a common object from a large asset library, \
                 given a concise description."
            }
        }
    }

    fn guidance(self) -> &'static str {
        match self {
            SubmoduleKind::CodeGenerator => {
                "ACTOR describes the Actor classes to write: their responsibilities, editable properties, \
                 and which existing meshes or materials they use. SPAWNER describes how many instances of \
                 each class to place, where, and with which initial property values."
            }
            SubmoduleKind::ProceduralMesh => {
                "ACTOR describes the geometry to build: overall shape, dimensions in centimeters, level of \
                 detail, and any editable parameters that control it."
            }
            SubmoduleKind::DiffusionMesh => {
                "DESCRIPTION is a detailed visual description of a single object: shape, materials, colors \
                 and style. Describe one object only, with no scene or background."
            }
            SubmoduleKind::MeshDownloader => {
                "DESCRIPTION is a concise description of a common object, a few words long, such as \
                 \"a low-poly sheep\"."
            }
        }
    }
}

pub fn default_roster() -> Vec<SubmoduleDescriptor> {
    SubmoduleKind::ALL
        .into_iter()
        .map(|k| SubmoduleDescriptor::new(k.name(), k.description()))
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("could not parse model output: {0}")]
    ParseFailure(String),
    #[error("unknown submodule {0:?}")]
    UnknownSubmodule(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error(transparent)]
    Garden(#[from] GardenError),
}

impl PlanError {
    fn is_retryable(&self) -> bool {
        matches!(self, PlanError::ParseFailure(_) | PlanError::UnknownSubmodule(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOptions {
    /// Character budget for the plan tree shown to the sub-planner.
    pub context_budget: usize,
    /// Extra fragment appended verbatim to planner and task-generator system
    /// prompts.
    pub test_disclaimer: Option<String>,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self { context_budget: 12_000, test_disclaimer: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedStep {
    pub text: String,
    pub marker: Option<LeafMarker>,
    /// Flagged by the depth bound rather than by the model.
    pub forced_leaf: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expansion {
    /// Outline (seed) or re-articulated step (plan step).
    pub detail: String,
    pub steps: Vec<PlannedStep>,
}

pub struct Planner<'a> {
    model: &'a dyn LanguageModel,
    options: &'a PlannerOptions,
}

impl<'a> Planner<'a> {
    pub fn new(model: &'a dyn LanguageModel, options: &'a PlannerOptions) -> Self {
        Self { model, options }
    }

    /// Sends `request`, parses the reply, and reprompts once on a parse
    /// failure before giving up.
    fn ask<T>(
        &self,
        request: CompletionRequest,
        parse: impl Fn(&str) -> Result<T, PlanError>,
    ) -> Result<T, PlanError> {
        let reply = self.model.complete(&request)?.text;
        match parse(&reply) {
            Err(e) if e.is_retryable() => {
                let retry = request.follow_up(
                    reply,
                    format!("Your reply could not be used ({e}). Answer again, following the required format exactly."),
                );
                parse(&self.model.complete(&retry)?.text)
            }
            other => other,
        }
    }

    fn roster_text(config: &GardenConfig) -> String {
        config
            .submodule_roster
            .iter()
            .map(|s| format!("- {}: {}", s.name, s.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn disclaimer(&self) -> &str {
        self.options.test_disclaimer.as_deref().unwrap_or_default()
    }

    fn parse_with_markers(text: &str, config: &GardenConfig) -> Result<PlanParse, PlanError> {
        let parse = parse_plan(text)?;
        for step in &parse.steps {
            parse_leaf_marker(step, config)?;
        }
        Ok(parse)
    }

    /// Restates the seed as an outline and produces the top-level steps,
    /// truncated to the branching bound.
    pub fn make_broad_plan(&self, config: &GardenConfig, seed_text: &str) -> Result<PlanParse, PlanError> {
        if seed_text.trim().is_empty() {
            return Err(PlanError::PreconditionViolation("seed text is empty".into()));
        }
        let system = prompts::render(
            prompts::BROAD_PLANNER,
            &[
                ("max_branching", &config.max_branching.to_string()),
                ("max_depth", &config.max_depth.to_string()),
                ("leaf_marker_example", &render_leaf_marker("<submodule>")),
                ("roster", &Self::roster_text(config)),
                ("disclaimer", self.disclaimer()),
            ],
        );
        let request = CompletionRequest::new(AgentRole::BroadPlanner, system, format!("Idea: {}", seed_text.trim()));
        let parse = self.ask(request, |t| Self::parse_with_markers(t, config))?;
        Ok(truncate(parse, config.max_branching as usize))
    }

    /// Produces the children of a Seed or unexpanded non-leaf plan step.
    /// Children landing on the depth bound come back as leaves, with a
    /// follow-up roster query for any the model left unassigned.
    pub fn expand_plan_node(&self, garden: &Garden, node_id: NodeId) -> Result<Expansion, PlanError> {
        let node = garden.node(node_id)?;
        let config = garden.config();
        if !node.kind.is_plan() || node.is_leaf {
            return Err(PlanError::PreconditionViolation(format!("{node_id} is not an expandable plan node")));
        }
        if !garden.children(node_id).is_empty() {
            return Err(PlanError::PreconditionViolation(format!("{node_id} already has children")));
        }
        if node.status != NodeStatus::Pending {
            return Err(PlanError::PreconditionViolation(format!("{node_id} is not pending")));
        }
        let depth = garden.depth(node_id)?;
        if depth >= config.max_depth {
            return Err(PlanError::PreconditionViolation(format!("{node_id} is at the depth bound")));
        }
        let child_depth = depth + 1;

        let parse = if node.kind == NodeKind::Seed {
            self.make_broad_plan(config, &node.text)?
        } else {
            let system = prompts::render(
                prompts::SUB_PLANNER,
                &[
                    ("max_branching", &config.max_branching.to_string()),
                    ("max_depth", &config.max_depth.to_string()),
                    ("child_depth", &child_depth.to_string()),
                    ("leaf_marker_example", &render_leaf_marker("<submodule>")),
                    ("roster", &Self::roster_text(config)),
                    ("disclaimer", self.disclaimer()),
                ],
            );
            let tree = render_plan_tree(garden, Some(node_id), self.options.context_budget);
            let user = format!("Current plan tree:\n{tree}\nStep to expand: {}", node.text);
            let request = CompletionRequest::new(AgentRole::SubPlanner, system, user);
            let parse = self.ask(request, |t| Self::parse_with_markers(t, config))?;
            truncate(parse, config.max_branching as usize)
        };

        let mut steps = Vec::with_capacity(parse.steps.len());
        for raw in &parse.steps {
            let marker = parse_leaf_marker(raw, config)?;
            let text = strip_leaf_marker(raw).to_string();
            let step = match marker {
                Some(marker) => PlannedStep { text, marker: Some(marker), forced_leaf: false },
                None if child_depth >= config.max_depth => {
                    let marker = self.assign_submodule(config, &text)?;
                    PlannedStep { text, marker: Some(marker), forced_leaf: true }
                }
                None => PlannedStep { text, marker: None, forced_leaf: false },
            };
            steps.push(step);
        }
        Ok(Expansion { detail: parse.reformulation, steps })
    }

    /// Asks which roster entry should carry out `step_text`.
    pub fn assign_submodule(&self, config: &GardenConfig, step_text: &str) -> Result<LeafMarker, PlanError> {
        let system = prompts::render(
            prompts::LEAF_ASSIGNER,
            &[
                ("roster", &Self::roster_text(config)),
                ("leaf_marker_example", &render_leaf_marker("<submodule>")),
            ],
        );
        let request = CompletionRequest::new(AgentRole::LeafAssigner, system, format!("Task: {step_text}"));
        self.ask(request, |t| parse_assignment(t, config))
    }

    /// Translates a leaf into the input schema of its submodule.
    pub fn generate_task(&self, garden: &Garden, leaf_id: NodeId) -> Result<TaskSpec, PlanError> {
        let leaf = garden.node(leaf_id)?;
        if leaf.kind != NodeKind::PlanStep || !leaf.is_leaf {
            return Err(PlanError::PreconditionViolation(format!("{leaf_id} is not a leaf plan step")));
        }
        if garden.task_of(leaf_id).is_some() {
            return Err(PlanError::PreconditionViolation(format!("{leaf_id} already has a task")));
        }
        let Some(assigned) = leaf.assigned_submodule.as_deref() else {
            return Err(PlanError::PreconditionViolation(format!("{leaf_id} has no submodule")));
        };
        let descriptor = garden
            .config()
            .find_submodule(assigned)
            .ok_or_else(|| PlanError::UnknownSubmodule(assigned.to_string()))?;
        let kind = SubmoduleKind::from_name(&descriptor.name)
            .ok_or_else(|| PlanError::UnknownSubmodule(descriptor.name.clone()))?;
        let schema = kind.schema();
        let sections = schema
            .iter()
            .map(|s| format!("{}:", s.to_ascii_uppercase()))
            .collect::<Vec<_>>()
            .join("\n");
        let system = prompts::render(
            prompts::TASK_GENERATOR,
            &[
                ("submodule", &descriptor.name),
                ("capability", &descriptor.description),
                ("guidance", kind.guidance()),
                ("sections", &sections),
                ("disclaimer", self.disclaimer()),
            ],
        );
        let tree = render_plan_tree(garden, None, self.options.context_budget);
        let mut user = format!("Plan tree:\n{tree}\nLeaf step: {}", leaf.text);
        if let Payload::Detail(detail) = &leaf.payload {
            user.push_str(&format!("\nDetail: {detail}"));
        }
        let request = CompletionRequest::new(AgentRole::TaskGenerator, system, user);
        let prompt_parts = self.ask(request, |t| parse_sections(t, schema))?;
        let order_index = garden
            .ordered_leaves()
            .iter()
            .position(|l| *l == leaf_id)
            .expect("leaf is in the plan tree");
        Ok(TaskSpec { leaf_id, submodule: descriptor.name.clone(), prompt_parts, order_index })
    }
}

/// Keeps the first `max` steps and notes any truncation in the outline.
fn truncate(mut parse: PlanParse, max: usize) -> PlanParse {
    let total = parse.steps.len();
    if total > max {
        parse.steps.truncate(max);
        let note = format!("[truncated: kept {max} of {total} steps]");
        parse.reformulation = if parse.reformulation.is_empty() {
            note
        } else {
            format!("{} {note}", parse.reformulation)
        };
    }
    parse
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ReplayProvider;

    fn config(max_depth: u32, max_branching: u32) -> GardenConfig {
        GardenConfig { max_depth, max_branching, ..GardenConfig::default() }
    }

    #[test]
    fn broad_plan_fixture() {
        let model = ReplayProvider::new().with(
            AgentRole::BroadPlanner,
            &["OUTLINE: pastoral sim\n1. terrain\n2. sheep\n3. behavior"],
        );
        let opts = PlannerOptions::default();
        let plan = Planner::new(&model, &opts).make_broad_plan(&config(3, 3), "a sheep").unwrap();
        assert_eq!(plan.reformulation, "pastoral sim");
        assert_eq!(plan.steps.len(), 3);
    }

    #[test]
    fn broad_plan_truncates_to_branching() {
        let reply = "OUTLINE: big\n1. a\n2. b\n3. c\n4. d\n5. e\n6. f\n7. g";
        let model = ReplayProvider::new().with(AgentRole::BroadPlanner, &[reply]);
        let opts = PlannerOptions::default();
        let plan = Planner::new(&model, &opts).make_broad_plan(&config(3, 4), "x").unwrap();
        assert_eq!(plan.steps, vec!["a", "b", "c", "d"]);
        assert_eq!(plan.reformulation, "big [truncated: kept 4 of 7 steps]");
    }

    #[test]
    fn broad_plan_reprompts_once_then_fails() {
        let model = ReplayProvider::new().with(AgentRole::BroadPlanner, &["no list", "still none"]);
        let opts = PlannerOptions::default();
        let err = Planner::new(&model, &opts).make_broad_plan(&config(3, 3), "x").unwrap_err();
        assert!(matches!(err, PlanError::ParseFailure(_)));
        let requests = model.requests();
        assert_eq!(requests.len(), 2);
        assert_eq!(requests[1].messages.len(), 3);

        let model = ReplayProvider::new().with(AgentRole::BroadPlanner, &["no list", "OUTLINE: ok\n1. a"]);
        assert!(Planner::new(&model, &opts).make_broad_plan(&config(3, 3), "x").is_ok());
    }

    fn seeded(max_depth: u32) -> (Garden, NodeId) {
        let mut g = Garden::new(config(max_depth, 3)).unwrap();
        let root = g.add_seed("a sheep grazing on a grassy hillside").unwrap();
        (g, root)
    }

    #[test]
    fn forced_leaves_at_depth_bound() {
        let (mut g, root) = seeded(2);
        let mut seed = g.get(root).unwrap().clone();
        seed.status = NodeStatus::Succeeded;
        g.update_node(seed).unwrap();
        let step = g.add_child(root, NodeKind::PlanStep, "Add sheep", false, None).unwrap();
        let model = ReplayProvider::new()
            .with(AgentRole::SubPlanner, &["DETAIL: sheep\n1. Find a sheep model\n2. Make it wander"])
            .with(AgentRole::LeafAssigner, &["mesh_downloader", "[LEAF: code_generator]"]);
        let opts = PlannerOptions::default();
        let exp = Planner::new(&model, &opts).expand_plan_node(&g, step).unwrap();
        assert_eq!(exp.detail, "sheep");
        assert_eq!(
            exp.steps,
            vec![
                PlannedStep {
                    text: "Find a sheep model".into(),
                    marker: Some(LeafMarker { submodule: "mesh_downloader".into() }),
                    forced_leaf: true
                },
                PlannedStep {
                    text: "Make it wander".into(),
                    marker: Some(LeafMarker { submodule: "code_generator".into() }),
                    forced_leaf: true
                },
            ]
        );
        let sub_request = &model.requests_for(AgentRole::SubPlanner)[0];
        assert!(sub_request.transcript().contains("2. Add sheep") || sub_request.transcript().contains("1. Add sheep  <<< EXPAND"));
        assert!(sub_request.transcript().contains("mesh_downloader"));
    }

    #[test]
    fn marker_parse_during_expansion() {
        let (g, root) = seeded(3);
        let model = ReplayProvider::new().with(
            AgentRole::BroadPlanner,
            &["OUTLINE: o\n1. Generate sheep mesh [LEAF: mesh_downloader]\n2. Terrain"],
        );
        let opts = PlannerOptions::default();
        let exp = Planner::new(&model, &opts).expand_plan_node(&g, root).unwrap();
        assert_eq!(exp.steps[0].marker.as_ref().unwrap().submodule, "mesh_downloader");
        assert_eq!(exp.steps[0].text, "Generate sheep mesh");
        assert!(!exp.steps[0].forced_leaf);
        assert_eq!(exp.steps[1].marker, None);
    }

    #[test]
    fn unknown_submodule_marker_reprompts() {
        let (g, root) = seeded(3);
        let model = ReplayProvider::new().with(
            AgentRole::BroadPlanner,
            &["OUTLINE: o\n1. Animate [LEAF: animator]", "OUTLINE: o\n1. Animate [LEAF: animator]"],
        );
        let opts = PlannerOptions::default();
        let err = Planner::new(&model, &opts).expand_plan_node(&g, root).unwrap_err();
        assert_eq!(err, PlanError::UnknownSubmodule("animator".into()));
    }

    #[test]
    fn expansion_preconditions() {
        let (mut g, root) = seeded(3);
        let child = g.add_child(root, NodeKind::PlanStep, "a", false, None).unwrap();
        let model = ReplayProvider::new();
        let opts = PlannerOptions::default();
        let planner = Planner::new(&model, &opts);
        assert!(matches!(planner.expand_plan_node(&g, root), Err(PlanError::PreconditionViolation(_))));
        let leaf = g.add_child(child, NodeKind::PlanStep, "b", true, Some("code_generator")).unwrap();
        assert!(matches!(planner.expand_plan_node(&g, leaf), Err(PlanError::PreconditionViolation(_))));
        assert!(model.requests().is_empty());
    }

    #[test]
    fn task_generation_for_code_and_downloader() {
        let (mut g, root) = seeded(3);
        let code_leaf = g.add_child(root, NodeKind::PlanStep, "Sheep wander", true, Some("code_generator")).unwrap();
        let mesh_leaf = g.add_child(root, NodeKind::PlanStep, "Sheep mesh", true, Some("mesh_downloader")).unwrap();
        let model = ReplayProvider::new().with(
            AgentRole::TaskGenerator,
            &["ACTOR: A wandering sheep actor.\nSPAWNER: Place five sheep.", "a low-poly sheep"],
        );
        let opts = PlannerOptions::default();
        let planner = Planner::new(&model, &opts);
        let spec = planner.generate_task(&g, code_leaf).unwrap();
        assert_eq!(spec.prompt_parts.len(), 2);
        assert_eq!(spec.part("spawner"), "Place five sheep.");
        assert_eq!(spec.order_index, 0);
        let spec = planner.generate_task(&g, mesh_leaf).unwrap();
        assert_eq!(spec.prompt_parts.len(), 1);
        assert_eq!(spec.part("description"), "a low-poly sheep");
        assert_eq!(spec.order_index, 1);

        g.add_child(code_leaf, NodeKind::Task, "t", false, None).unwrap();
        assert!(matches!(planner.generate_task(&g, code_leaf), Err(PlanError::PreconditionViolation(_))));
    }

    #[test]
    fn disclaimer_passes_through() {
        let model = ReplayProvider::new().with(AgentRole::BroadPlanner, &["OUTLINE: o\n1. a"]);
        let opts = PlannerOptions { test_disclaimer: Some("FRAGMENT-123".into()), ..PlannerOptions::default() };
        Planner::new(&model, &opts).make_broad_plan(&config(3, 3), "x").unwrap();
        assert!(model.requests()[0].system_prompt.contains("FRAGMENT-123"));
    }
}

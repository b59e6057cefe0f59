//! The garden graph: plan tree, task nodes and implementation chains.
//!
//! This module is a passive data structure. It validates structure on every
//! mutation but performs no I/O and never talks to a model; callers are
//! expected to serialize access (see [`crate::orchestrator`]).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetOutcome;
use crate::codegen::{EvaluationReport, PipelineAttempt};
use crate::planner::TaskSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Seed,
    PlanStep,
    Task,
    CodeAttempt,
    Evaluation,
    AssetArtifact,
}

impl NodeKind {
    pub fn is_plan(self) -> bool {
        matches!(self, NodeKind::Seed | NodeKind::PlanStep)
    }

    /// Kinds that make up a task's implementation chain.
    pub fn is_implementation(self) -> bool {
        matches!(
            self,
            NodeKind::CodeAttempt | NodeKind::Evaluation | NodeKind::AssetArtifact
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Pending,
    InProgress,
    Succeeded,
    Failed,
    Pruned,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Paused,
    #[default]
    Step,
    Play,
}

/// Kind-specific attachment carried by a node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    #[default]
    None,
    /// Restated outline (seed) or re-articulated step (plan step).
    Detail(String),
    Task(TaskSpec),
    Attempt(PipelineAttempt),
    Evaluation(EvaluationReport),
    Asset(AssetOutcome),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GardenNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub child_order: u32,
    pub text: String,
    pub is_leaf: bool,
    pub assigned_submodule: Option<String>,
    pub status: NodeStatus,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmoduleDescriptor {
    pub name: String,
    pub description: String,
}

impl SubmoduleDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self { name: name.into(), description: description.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GardenConfig {
    pub max_depth: u32,
    pub max_branching: u32,
    pub max_code_attempts: u32,
    pub submodule_roster: Vec<SubmoduleDescriptor>,
}

impl Default for GardenConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            max_branching: 3,
            max_code_attempts: 3,
            submodule_roster: crate::planner::default_roster(),
        }
    }
}

impl GardenConfig {
    pub fn validate(&self) -> Result<(), GardenError> {
        if self.max_depth == 0 || self.max_branching == 0 || self.max_code_attempts == 0 {
            return Err(GardenError::InvalidConfig("all bounds must be at least 1".into()));
        }
        if self.submodule_roster.is_empty() {
            return Err(GardenError::InvalidConfig("submodule roster is empty".into()));
        }
        Ok(())
    }

    /// Case-insensitive roster lookup returning the canonical descriptor.
    pub fn find_submodule(&self, name: &str) -> Option<&SubmoduleDescriptor> {
        let name = name.trim();
        self.submodule_roster.iter().find(|s| s.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GardenError {
    #[error("garden already has a seed node")]
    SeedAlreadyExists,
    #[error("node text is empty")]
    EmptyText,
    #[error("unknown parent {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("kind violation: {0}")]
    KindViolation(String),
    #[error("leaf violation: {0}")]
    LeafViolation(String),
    #[error("node id {0} is already in use")]
    DuplicateId(NodeId),
    #[error("node {0} still has children")]
    HasChildren(NodeId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// One unit of pending work, in the order the scheduler should take it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "work", content = "node", rename_all = "snake_case")]
pub enum FrontierItem {
    Expand(NodeId),
    GenerateTask(NodeId),
    Implement(NodeId),
}

impl FrontierItem {
    pub fn node(self) -> NodeId {
        match self {
            FrontierItem::Expand(id) | FrontierItem::GenerateTask(id) | FrontierItem::Implement(id) => id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "GardenRepr", into = "GardenRepr")]
pub struct Garden {
    nodes: BTreeMap<NodeId, GardenNode>,
    next_id: u64,
    config: GardenConfig,
    mode: Mode,
    // Derived: children sorted by (child_order, id). Rebuilt on load.
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Serialize, Deserialize)]
struct GardenRepr {
    next_id: u64,
    mode: Mode,
    config: GardenConfig,
    nodes: Vec<GardenNode>,
}

impl From<GardenRepr> for Garden {
    fn from(repr: GardenRepr) -> Self {
        let mut garden = Garden {
            nodes: repr.nodes.into_iter().map(|n| (n.id, n)).collect(),
            next_id: repr.next_id,
            config: repr.config,
            mode: repr.mode,
            children: BTreeMap::new(),
        };
        garden.rebuild_index();
        garden
    }
}

impl From<Garden> for GardenRepr {
    fn from(garden: Garden) -> Self {
        GardenRepr {
            next_id: garden.next_id,
            mode: garden.mode,
            config: garden.config,
            nodes: garden.nodes.into_values().collect(),
        }
    }
}

impl Garden {
    pub fn new(config: GardenConfig) -> Result<Self, GardenError> {
        config.validate()?;
        Ok(Self {
            nodes: BTreeMap::new(),
            next_id: 1,
            config,
            mode: Mode::default(),
            children: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &GardenConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The id the next created node will receive.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.next_id)
    }

    pub fn get(&self, id: NodeId) -> Option<&GardenNode> {
        self.nodes.get(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&GardenNode, GardenError> {
        self.nodes.get(&id).ok_or(GardenError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GardenNode> {
        self.nodes.values()
    }

    pub fn seed(&self) -> Option<NodeId> {
        self.nodes.values().find(|n| n.kind == NodeKind::Seed).map(|n| n.id)
    }

    /// Children in sibling order.
    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn plan_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children(id)
            .iter()
            .copied()
            .filter(|c| self.nodes[c].kind == NodeKind::PlanStep)
    }

    /// Plan-tree depth; the seed is depth 0. Implementation nodes report the
    /// depth of their chain position below the seed.
    pub fn depth(&self, id: NodeId) -> Result<u32, GardenError> {
        let mut node = self.node(id)?;
        let mut depth = 0;
        while let Some(parent) = node.parent {
            depth += 1;
            node = self.node(parent)?;
        }
        Ok(depth)
    }

    pub fn add_seed(&mut self, text: &str) -> Result<NodeId, GardenError> {
        if self.seed().is_some() {
            return Err(GardenError::SeedAlreadyExists);
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(GardenError::EmptyText);
        }
        let node = GardenNode {
            id: self.next_id(),
            kind: NodeKind::Seed,
            parent: None,
            child_order: 0,
            text: text.to_string(),
            is_leaf: false,
            assigned_submodule: None,
            status: NodeStatus::Pending,
            payload: Payload::None,
        };
        let id = node.id;
        self.insert_node(node)?;
        Ok(id)
    }

    /// Validates a new child and builds it without inserting it.
    pub fn prepare_child(
        &self,
        parent: NodeId,
        kind: NodeKind,
        text: &str,
        is_leaf: bool,
        assigned_submodule: Option<&str>,
    ) -> Result<GardenNode, GardenError> {
        if kind == NodeKind::Seed {
            return Err(GardenError::KindViolation("seed nodes cannot have a parent".into()));
        }
        let parent_node = self.nodes.get(&parent).ok_or(GardenError::UnknownParent(parent))?;
        let child_order = self
            .children(parent)
            .iter()
            .map(|c| self.nodes[c].child_order + 1)
            .max()
            .unwrap_or(0);
        let node = GardenNode {
            id: self.next_id(),
            kind,
            parent: Some(parent),
            child_order,
            text: text.to_string(),
            is_leaf,
            assigned_submodule: assigned_submodule.map(str::to_string),
            status: NodeStatus::Pending,
            payload: Payload::None,
        };
        self.check_placement(parent_node, &node)?;
        Ok(node)
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        kind: NodeKind,
        text: &str,
        is_leaf: bool,
        assigned_submodule: Option<&str>,
    ) -> Result<NodeId, GardenError> {
        let node = self.prepare_child(parent, kind, text, is_leaf, assigned_submodule)?;
        let id = node.id;
        self.insert_node(node)?;
        Ok(id)
    }

    /// Inserts a fully formed node, e.g. one recorded in an event or a backup.
    pub fn insert_node(&mut self, node: GardenNode) -> Result<(), GardenError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GardenError::DuplicateId(node.id));
        }
        match node.parent {
            None => {
                if node.kind != NodeKind::Seed {
                    return Err(GardenError::KindViolation(format!("{} has no parent", node.id)));
                }
                if self.seed().is_some() {
                    return Err(GardenError::SeedAlreadyExists);
                }
            }
            Some(parent) => {
                let parent_node =
                    self.nodes.get(&parent).ok_or(GardenError::UnknownParent(parent))?;
                self.check_placement(parent_node, &node)?;
            }
        }
        self.check_flags(&node)?;
        self.next_id = self.next_id.max(node.id.0 + 1);
        if let Some(parent) = node.parent {
            self.link_child(parent, &node);
        }
        self.nodes.insert(node.id, node);
        Ok(())
    }

    /// Replaces a node's mutable state. Kind, parent and sibling position
    /// cannot change.
    pub fn update_node(&mut self, node: GardenNode) -> Result<(), GardenError> {
        let current = self.node(node.id)?;
        if current.kind != node.kind {
            return Err(GardenError::KindViolation(format!(
                "{} cannot change kind from {:?} to {:?}",
                node.id, current.kind, node.kind
            )));
        }
        if current.parent != node.parent || current.child_order != node.child_order {
            return Err(GardenError::KindViolation(format!("{} cannot be re-parented", node.id)));
        }
        self.check_flags(&node)?;
        if node.is_leaf && self.plan_children(node.id).next().is_some() {
            return Err(GardenError::LeafViolation(format!(
                "{} has plan-step children and cannot be a leaf",
                node.id
            )));
        }
        if !node.is_leaf
            && self.children(node.id).iter().any(|c| self.nodes[c].kind == NodeKind::Task)
        {
            return Err(GardenError::LeafViolation(format!(
                "{} carries a task and must stay a leaf",
                node.id
            )));
        }
        self.nodes.insert(node.id, node);
        Ok(())
    }

    /// Removes a node that has no children. Ids are never reused.
    pub fn remove_node(&mut self, id: NodeId) -> Result<GardenNode, GardenError> {
        self.node(id)?;
        if !self.children(id).is_empty() {
            return Err(GardenError::HasChildren(id));
        }
        let node = self.nodes.remove(&id).expect("checked above");
        self.children.remove(&id);
        if let Some(parent) = node.parent {
            if let Some(siblings) = self.children.get_mut(&parent) {
                siblings.retain(|c| *c != id);
                // Keep the index canonical so derived equality holds.
                if siblings.is_empty() {
                    self.children.remove(&parent);
                }
            }
        }
        Ok(node)
    }

    fn link_child(&mut self, parent: NodeId, node: &GardenNode) {
        let nodes = &self.nodes;
        let siblings = self.children.entry(parent).or_default();
        let key = (node.child_order, node.id);
        let pos = siblings.partition_point(|s| {
            let n = &nodes[s];
            (n.child_order, n.id) < key
        });
        siblings.insert(pos, node.id);
    }

    fn rebuild_index(&mut self) {
        self.children.clear();
        let mut pairs: Vec<(NodeId, (u32, NodeId))> = self
            .nodes
            .values()
            .filter_map(|n| n.parent.map(|p| (p, (n.child_order, n.id))))
            .collect();
        pairs.sort();
        for (parent, (_, id)) in pairs {
            self.children.entry(parent).or_default().push(id);
        }
    }

    fn check_flags(&self, node: &GardenNode) -> Result<(), GardenError> {
        if node.is_leaf && node.kind != NodeKind::PlanStep {
            return Err(GardenError::KindViolation(format!(
                "only plan steps can be leaves, not {:?}",
                node.kind
            )));
        }
        if node.assigned_submodule.is_some() && !node.is_leaf {
            return Err(GardenError::LeafViolation(format!(
                "{} has a submodule but is not a leaf",
                node.id
            )));
        }
        Ok(())
    }

    fn check_placement(&self, parent: &GardenNode, node: &GardenNode) -> Result<(), GardenError> {
        let siblings = self.children(parent.id);
        let violation = |msg: String| Err(GardenError::KindViolation(msg));
        match node.kind {
            NodeKind::Seed => violation("seed nodes cannot have a parent".into()),
            NodeKind::PlanStep => {
                if !parent.kind.is_plan() {
                    return violation(format!("plan step under {:?}", parent.kind));
                }
                if parent.is_leaf {
                    return Err(GardenError::LeafViolation(format!(
                        "{} is a leaf and cannot take plan-step children",
                        parent.id
                    )));
                }
                Ok(())
            }
            NodeKind::Task => {
                if parent.kind != NodeKind::PlanStep || !parent.is_leaf {
                    return violation(format!("task must hang off a leaf plan step, not {}", parent.id));
                }
                if siblings.iter().any(|s| self.nodes[s].kind == NodeKind::Task) {
                    return violation(format!("{} already has a task", parent.id));
                }
                Ok(())
            }
            NodeKind::CodeAttempt | NodeKind::Evaluation | NodeKind::AssetArtifact => {
                if parent.kind != NodeKind::Task && !parent.kind.is_implementation() {
                    return violation(format!("{:?} must extend a task chain", node.kind));
                }
                if siblings.iter().any(|s| self.nodes[s].kind.is_implementation()) {
                    return violation(format!("{} already continues its chain", parent.id));
                }
                Ok(())
            }
        }
    }

    /// All transitive children of `id` in pre-order, excluding `id`.
    pub fn descendants(&self, id: NodeId) -> Result<Vec<NodeId>, GardenError> {
        self.node(id)?;
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.children(id).iter().rev().copied().collect();
        while let Some(next) = stack.pop() {
            out.push(next);
            stack.extend(self.children(next).iter().rev().copied());
        }
        Ok(out)
    }

    /// Leaf plan steps in depth-first sibling order. This is the global task
    /// execution order.
    pub fn ordered_leaves(&self) -> Vec<NodeId> {
        let Some(seed) = self.seed() else { return Vec::new() };
        let mut out = Vec::new();
        self.visit_plan(seed, &mut |node| {
            if node.kind == NodeKind::PlanStep && node.is_leaf {
                out.push(node.id);
            }
        });
        out
    }

    fn visit_plan(&self, id: NodeId, f: &mut impl FnMut(&GardenNode)) {
        f(&self.nodes[&id]);
        for child in self.plan_children(id).collect::<Vec<_>>() {
            self.visit_plan(child, f);
        }
    }

    /// The task node attached to a leaf plan step.
    pub fn task_of(&self, leaf: NodeId) -> Option<NodeId> {
        self.children(leaf).iter().copied().find(|c| self.nodes[c].kind == NodeKind::Task)
    }

    /// The implementation chain below a task, in creation order.
    pub fn chain(&self, task: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cursor = task;
        while let Some(next) = self
            .children(cursor)
            .iter()
            .copied()
            .find(|c| self.nodes[c].kind.is_implementation())
        {
            out.push(next);
            cursor = next;
        }
        out
    }

    /// The task an implementation node belongs to.
    pub fn owning_task(&self, id: NodeId) -> Result<NodeId, GardenError> {
        let mut node = self.node(id)?;
        while node.kind.is_implementation() {
            let parent = node.parent.ok_or(GardenError::UnknownParent(node.id))?;
            node = self.node(parent)?;
        }
        if node.kind == NodeKind::Task {
            Ok(node.id)
        } else {
            Err(GardenError::KindViolation(format!("{id} is not part of a task chain")))
        }
    }

    /// Pending work in priority order: plan expansion, then task generation,
    /// then implementation.
    pub fn compute_frontier(&self) -> Vec<FrontierItem> {
        let Some(seed) = self.seed() else { return Vec::new() };
        let mut frontier = Vec::new();

        let mut queue = VecDeque::from([seed]);
        while let Some(id) = queue.pop_front() {
            let node = &self.nodes[&id];
            if node.status == NodeStatus::Pending
                && !node.is_leaf
                && self.children(id).is_empty()
            {
                frontier.push(FrontierItem::Expand(id));
            }
            queue.extend(self.plan_children(id));
        }

        let leaves = self.ordered_leaves();
        for &leaf in &leaves {
            if self.task_of(leaf).is_none() && self.nodes[&leaf].status != NodeStatus::Failed {
                frontier.push(FrontierItem::GenerateTask(leaf));
            }
        }
        for &leaf in &leaves {
            if let Some(task) = self.task_of(leaf) {
                if matches!(self.nodes[&task].status, NodeStatus::Pending | NodeStatus::InProgress) {
                    frontier.push(FrontierItem::Implement(task));
                }
            }
        }
        frontier
    }

    /// Checks every structural invariant. Used by tests and after loading.
    pub fn validate(&self) -> Result<(), GardenError> {
        let seeds = self.nodes.values().filter(|n| n.kind == NodeKind::Seed).count();
        if seeds > 1 {
            return Err(GardenError::SeedAlreadyExists);
        }
        for node in self.nodes.values() {
            if node.id.0 >= self.next_id {
                return Err(GardenError::DuplicateId(node.id));
            }
            self.check_flags(node)?;
            match node.parent {
                None if node.kind != NodeKind::Seed => {
                    return Err(GardenError::KindViolation(format!("{} has no parent", node.id)))
                }
                None => {}
                Some(parent) => {
                    let parent_node =
                        self.nodes.get(&parent).ok_or(GardenError::UnknownParent(parent))?;
                    // Placement is checked against the siblings that precede
                    // this node so that the node itself does not conflict.
                    let earlier = self
                        .children(parent)
                        .iter()
                        .take_while(|c| **c != node.id)
                        .any(|c| {
                            let s = &self.nodes[c];
                            (node.kind == NodeKind::Task && s.kind == NodeKind::Task)
                                || (node.kind.is_implementation() && s.kind.is_implementation())
                        });
                    if earlier {
                        return Err(GardenError::KindViolation(format!(
                            "{} duplicates a single-slot child of {}",
                            node.id, parent
                        )));
                    }
                    match node.kind {
                        NodeKind::PlanStep if !parent_node.kind.is_plan() || parent_node.is_leaf => {
                            return Err(GardenError::LeafViolation(format!(
                                "{} sits under {}",
                                node.id, parent
                            )))
                        }
                        NodeKind::Task
                            if parent_node.kind != NodeKind::PlanStep || !parent_node.is_leaf =>
                        {
                            return Err(GardenError::KindViolation(format!(
                                "task {} sits under non-leaf {}",
                                node.id, parent
                            )))
                        }
                        k if k.is_implementation()
                            && parent_node.kind != NodeKind::Task
                            && !parent_node.kind.is_implementation() =>
                        {
                            return Err(GardenError::KindViolation(format!(
                                "{} is detached from a task chain",
                                node.id
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        // Reachability from the seed rules out cycles.
        if let Some(seed) = self.seed() {
            let reachable = self.descendants(seed)?.len() + 1;
            if reachable != self.nodes.len() {
                return Err(GardenError::KindViolation("graph has unreachable nodes".into()));
            }
        } else if !self.nodes.is_empty() {
            return Err(GardenError::KindViolation("nodes without a seed".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn garden() -> Garden {
        Garden::new(GardenConfig::default()).unwrap()
    }

    #[test]
    fn seed_creation() {
        let mut g = garden();
        let root = g.add_seed("a sheep grazing on a grassy hillside").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.node(root).unwrap().status, NodeStatus::Pending);
        assert_eq!(g.node(root).unwrap().parent, None);

        let mut g = garden();
        let root = g.add_seed("x").unwrap();
        assert_eq!(g.node(root).unwrap().text, "x");
        assert_eq!(g.add_seed("again"), Err(GardenError::SeedAlreadyExists));
        assert_eq!(garden().add_seed("   "), Err(GardenError::EmptyText));
    }

    #[test]
    fn child_ordinals_and_kind_rules() {
        let mut g = garden();
        let root = g.add_seed("seed").unwrap();
        let terrain = g.add_child(root, NodeKind::PlanStep, "Create terrain", false, None).unwrap();
        assert_eq!(g.node(terrain).unwrap().child_order, 0);
        let leaf = g
            .add_child(root, NodeKind::PlanStep, "Fetch sheep", true, Some("mesh_downloader"))
            .unwrap();
        assert_eq!(g.node(leaf).unwrap().child_order, 1);

        let task = g.add_child(leaf, NodeKind::Task, "task", false, None).unwrap();
        assert_eq!(g.node(task).unwrap().child_order, 0);

        assert!(matches!(
            g.add_child(leaf, NodeKind::PlanStep, "nope", false, None),
            Err(GardenError::LeafViolation(_))
        ));
        assert!(matches!(
            g.add_child(terrain, NodeKind::Task, "nope", false, None),
            Err(GardenError::KindViolation(_))
        ));
        assert!(matches!(
            g.add_child(leaf, NodeKind::Task, "second", false, None),
            Err(GardenError::KindViolation(_))
        ));
        assert_eq!(
            g.add_child(NodeId(99), NodeKind::PlanStep, "x", false, None),
            Err(GardenError::UnknownParent(NodeId(99)))
        );
        assert!(matches!(
            g.add_child(root, NodeKind::PlanStep, "x", false, Some("code_generator")),
            Err(GardenError::LeafViolation(_))
        ));
        g.validate().unwrap();
    }

    #[test]
    fn chains_are_single_file() {
        let mut g = garden();
        let root = g.add_seed("seed").unwrap();
        let leaf = g.add_child(root, NodeKind::PlanStep, "leaf", true, Some("code_generator")).unwrap();
        let task = g.add_child(leaf, NodeKind::Task, "t", false, None).unwrap();
        let a1 = g.add_child(task, NodeKind::CodeAttempt, "a1", false, None).unwrap();
        let e1 = g.add_child(a1, NodeKind::Evaluation, "e1", false, None).unwrap();
        assert!(g.add_child(task, NodeKind::CodeAttempt, "fork", false, None).is_err());
        let a2 = g.add_child(e1, NodeKind::CodeAttempt, "a2", false, None).unwrap();
        assert_eq!(g.chain(task), vec![a1, e1, a2]);
        assert_eq!(g.owning_task(a2).unwrap(), task);
        assert!(g.add_child(root, NodeKind::Evaluation, "x", false, None).is_err());
    }

    #[test]
    fn descendants_of_chain() {
        let mut g = garden();
        let a = g.add_seed("a").unwrap();
        let b = g.add_child(a, NodeKind::PlanStep, "b", false, None).unwrap();
        let c = g.add_child(b, NodeKind::PlanStep, "c", false, None).unwrap();
        assert_eq!(g.descendants(a).unwrap(), vec![b, c]);
        assert!(g.descendants(c).unwrap().is_empty());
        assert_eq!(g.descendants(NodeId(42)), Err(GardenError::UnknownNode(NodeId(42))));
    }

    #[test]
    fn leaves_follow_sibling_order() {
        let mut g = garden();
        let root = g.add_seed("s").unwrap();
        let first = g.add_child(root, NodeKind::PlanStep, "first", false, None).unwrap();
        let second = g.add_child(root, NodeKind::PlanStep, "second", false, None).unwrap();
        let l3 = g.add_child(second, NodeKind::PlanStep, "l3", true, None).unwrap();
        let l1 = g.add_child(first, NodeKind::PlanStep, "l1", true, None).unwrap();
        let l2 = g.add_child(first, NodeKind::PlanStep, "l2", true, None).unwrap();
        assert_eq!(g.ordered_leaves(), vec![l1, l2, l3]);

        let mut g = garden();
        let root = g.add_seed("s").unwrap();
        let only = g.add_child(root, NodeKind::PlanStep, "only", true, None).unwrap();
        assert_eq!(g.ordered_leaves(), vec![only]);
    }

    #[test]
    fn frontier_phases() {
        let mut g = garden();
        assert!(g.compute_frontier().is_empty());
        let root = g.add_seed("s").unwrap();
        assert_eq!(g.compute_frontier(), vec![FrontierItem::Expand(root)]);

        let mut seed = g.node(root).unwrap().clone();
        seed.status = NodeStatus::Succeeded;
        g.update_node(seed).unwrap();
        let l1 = g.add_child(root, NodeKind::PlanStep, "l1", true, Some("code_generator")).unwrap();
        let l2 = g.add_child(root, NodeKind::PlanStep, "l2", true, Some("code_generator")).unwrap();
        assert_eq!(
            g.compute_frontier(),
            vec![FrontierItem::GenerateTask(l1), FrontierItem::GenerateTask(l2)]
        );
        let t1 = g.add_child(l1, NodeKind::Task, "t1", false, None).unwrap();
        assert_eq!(
            g.compute_frontier(),
            vec![FrontierItem::GenerateTask(l2), FrontierItem::Implement(t1)]
        );
        assert_eq!(g.compute_frontier(), g.compute_frontier());
    }

    #[test]
    fn removal_requires_leaf_position() {
        let mut g = garden();
        let root = g.add_seed("s").unwrap();
        let a = g.add_child(root, NodeKind::PlanStep, "a", false, None).unwrap();
        let b = g.add_child(a, NodeKind::PlanStep, "b", false, None).unwrap();
        assert_eq!(g.remove_node(a), Err(GardenError::HasChildren(a)));
        g.remove_node(b).unwrap();
        g.remove_node(a).unwrap();
        // Ordinals keep growing after deletions so restored nodes never collide.
        let c = g.add_child(root, NodeKind::PlanStep, "c", false, None).unwrap();
        assert_eq!(g.node(c).unwrap().child_order, 0);
        assert_eq!(c, NodeId(4));
    }

    #[test]
    fn updates_cannot_change_kind() {
        let mut g = garden();
        let root = g.add_seed("s").unwrap();
        let a = g.add_child(root, NodeKind::PlanStep, "a", false, None).unwrap();
        let _b = g.add_child(a, NodeKind::PlanStep, "b", false, None).unwrap();
        let mut changed = g.node(a).unwrap().clone();
        changed.kind = NodeKind::Task;
        assert!(matches!(g.update_node(changed), Err(GardenError::KindViolation(_))));
        let mut leafed = g.node(a).unwrap().clone();
        leafed.is_leaf = true;
        assert!(matches!(g.update_node(leafed), Err(GardenError::LeafViolation(_))));
    }

    #[test]
    fn serde_rebuilds_child_index() {
        let mut g = garden();
        let root = g.add_seed("s").unwrap();
        g.add_child(root, NodeKind::PlanStep, "a", false, None).unwrap();
        g.add_child(root, NodeKind::PlanStep, "b", false, None).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: Garden = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.children(root).len(), 2);
    }

    #[test]
    fn config_bounds() {
        let mut cfg = GardenConfig::default();
        cfg.max_depth = 0;
        assert!(Garden::new(cfg).is_err());
        let mut cfg = GardenConfig::default();
        cfg.submodule_roster.clear();
        assert!(Garden::new(cfg).is_err());
        let cfg = GardenConfig::default();
        assert_eq!(cfg.find_submodule("CODE_GENERATOR").unwrap().name, "code_generator");
    }
}

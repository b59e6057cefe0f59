use serde::{Deserialize, Serialize};

use crate::engine::ScreenshotRef;
use crate::garden::{FrontierItem, Garden, GardenConfig, GardenNode, Mode, NodeId, NodeKind, NodeStatus, Payload};
use crate::persistence::GardenState;

pub const EXCERPT_CHARS: usize = 160;

/// Cuts `text` to at most `EXCERPT_CHARS` characters on a char boundary.
pub fn excerpt_text(text: &str) -> (String, bool) {
    match text.char_indices().nth(EXCERPT_CHARS) {
        Some((cut, _)) => (format!("{}…", &text[..cut]), true),
        None => (text.to_string(), false),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub kind: NodeKind,
    pub status: NodeStatus,
    pub is_leaf: bool,
    pub assigned_submodule: Option<String>,
    pub text: String,
    pub truncated: bool,
    pub parent: Option<NodeId>,
    pub child_order: u32,
}

impl NodeView {
    fn of(node: &GardenNode) -> Self {
        let (text, truncated) = excerpt_text(&node.text);
        Self {
            id: node.id,
            kind: node.kind,
            status: node.status,
            is_leaf: node.is_leaf,
            assigned_submodule: node.assigned_submodule.clone(),
            text,
            truncated,
            parent: node.parent,
            child_order: node.child_order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub max_depth: u32,
    pub max_branching: u32,
    pub max_code_attempts: u32,
    pub submodules: Vec<String>,
}

impl From<&GardenConfig> for ConfigSummary {
    fn from(config: &GardenConfig) -> Self {
        Self {
            max_depth: config.max_depth,
            max_branching: config.max_branching,
            max_code_attempts: config.max_code_attempts,
            submodules: config.submodule_roster.iter().map(|s| s.name.clone()).collect(),
        }
    }
}

/// What the UI draws: every node in id order with excerpted text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiGardenView {
    pub garden_id: String,
    pub nodes: Vec<NodeView>,
    pub in_progress: Option<NodeId>,
    pub mode: Mode,
    pub config: ConfigSummary,
    pub frontier: Vec<FrontierItem>,
    pub ordered_leaves: Vec<NodeId>,
    /// Seq of the last event folded into this view.
    pub last_seq: Option<u64>,
}

impl ApiGardenView {
    pub fn from_state(state: &GardenState, last_seq: Option<u64>) -> Option<Self> {
        let garden = state.garden()?;
        let mut nodes: Vec<NodeView> = garden.nodes().map(NodeView::of).collect();
        nodes.sort_by_key(|n| n.id);
        Some(Self {
            garden_id: state.garden_id().to_string(),
            nodes,
            in_progress: state.in_progress(),
            mode: garden.mode(),
            config: garden.config().into(),
            frontier: garden.compute_frontier(),
            ordered_leaves: garden.ordered_leaves(),
            last_seq,
        })
    }
}

/// One node in full: payload, children, captures and feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDetail {
    pub node: GardenNode,
    pub depth: u32,
    pub children: Vec<NodeId>,
    pub screenshots: Vec<ScreenshotRef>,
    pub feedback: Option<String>,
}

impl NodeDetail {
    pub fn from_garden(garden: &Garden, id: NodeId) -> Option<Self> {
        let node = garden.get(id)?.clone();
        let (screenshots, feedback) = match &node.payload {
            Payload::Attempt(a) => (a.screenshots.clone(), (!a.feedback.is_empty()).then(|| a.feedback.clone())),
            Payload::Evaluation(r) => (Vec::new(), Some(r.feedback.clone())),
            _ => (Vec::new(), None),
        };
        Some(Self {
            depth: garden.depth(id).ok()?,
            children: garden.children(id).to_vec(),
            node,
            screenshots,
            feedback,
        })
    }
}

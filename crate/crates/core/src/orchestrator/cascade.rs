use std::collections::BTreeSet;

use super::{OrchestratorError, UserEdit};
use crate::codegen::Verdict;
use crate::garden::{Garden, GardenNode, NodeId, NodeKind, NodeStatus, Payload};

/// What an edit will do to the garden: nodes to delete (pre-order, parents
/// first) and new states for nodes that stay.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditPlan {
    pub removed: Vec<NodeId>,
    pub modified: Vec<GardenNode>,
}

impl EditPlan {
    pub fn is_noop(&self) -> bool {
        self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn removed_set(&self) -> BTreeSet<NodeId> {
        self.removed.iter().copied().collect()
    }

    fn remove_subtree(&mut self, garden: &Garden, root: NodeId) -> Result<(), OrchestratorError> {
        for id in garden.descendants(root)? {
            if !self.removed.contains(&id) {
                self.removed.push(id);
            }
        }
        Ok(())
    }

    fn modify(&mut self, node: GardenNode) {
        match self.modified.iter_mut().find(|n| n.id == node.id) {
            Some(slot) => *slot = node,
            None => self.modified.push(node),
        }
    }
}

/// Plan nodes in depth-first sibling order.
fn plan_preorder(garden: &Garden) -> Vec<NodeId> {
    let mut out = Vec::new();
    let Some(seed) = garden.seed() else { return out };
    let mut stack = vec![seed];
    while let Some(id) = stack.pop() {
        out.push(id);
        let children: Vec<NodeId> = garden.plan_children(id).collect();
        stack.extend(children.into_iter().rev());
    }
    out
}

/// Tasks whose leaves come after `anchor` and its whole subtree in the
/// global task order.
fn later_tasks(garden: &Garden, anchor: NodeId) -> Vec<NodeId> {
    let order = plan_preorder(garden);
    let Some(pos) = order.iter().position(|id| *id == anchor) else { return Vec::new() };
    let subtree = garden.descendants(anchor).map(|d| d.into_iter().collect::<BTreeSet<_>>()).unwrap_or_default();
    order[pos + 1..]
        .iter()
        .filter(|id| !subtree.contains(id))
        .filter_map(|id| {
            let node = garden.get(*id)?;
            (node.kind == NodeKind::PlanStep && node.is_leaf).then(|| garden.task_of(*id)).flatten()
        })
        .collect()
}

/// Unconditional downstream taint: every later task loses its chain and
/// goes back to pending.
fn taint_later(plan: &mut EditPlan, garden: &Garden, anchor: NodeId) -> Result<(), OrchestratorError> {
    for task in later_tasks(garden, anchor) {
        plan.remove_subtree(garden, task)?;
        let node = garden.node(task)?;
        if node.status != NodeStatus::Pending {
            plan.modify(GardenNode { status: NodeStatus::Pending, ..node.clone() });
        }
    }
    Ok(())
}

fn non_empty(text: &str, what: &str) -> Result<String, OrchestratorError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(OrchestratorError::MalformedEdit(format!("{what} must not be empty")));
    }
    Ok(text.to_string())
}

/// Computes the cascade for a structural edit without touching the garden.
/// Mode changes and compile-and-run requests carry no cascade.
pub fn plan_edit(garden: &Garden, edit: &UserEdit) -> Result<EditPlan, OrchestratorError> {
    let mut plan = EditPlan::default();
    match edit {
        UserEdit::SetMode { .. } | UserEdit::CompileAndRunAt { .. } => {}
        UserEdit::EditNodeText { target, text } => {
            let node = garden.node(*target)?;
            let text = non_empty(text, "node text")?;
            if node.text != text {
                plan.modify(GardenNode { text, ..node.clone() });
            }
        }
        UserEdit::ToggleLeaf { target, is_leaf: true, submodule } => {
            let node = garden.node(*target)?;
            if node.kind != NodeKind::PlanStep {
                return Err(OrchestratorError::KindViolation(format!("{target} is a {:?}, not a plan step", node.kind)));
            }
            let submodule = match submodule.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
                Some(name) => Some(
                    garden
                        .config()
                        .find_submodule(name)
                        .ok_or_else(|| OrchestratorError::MalformedEdit(format!("unknown submodule {name:?}")))?
                        .name
                        .clone(),
                ),
                None => None,
            };
            if node.is_leaf {
                if submodule.is_some() && submodule != node.assigned_submodule {
                    return Err(OrchestratorError::Precondition(format!(
                        "{target} is already a leaf; turn it back into a plan step to reassign it"
                    )));
                }
                return Ok(plan);
            }
            plan.remove_subtree(garden, *target)?;
            taint_later(&mut plan, garden, *target)?;
            plan.modify(GardenNode {
                is_leaf: true,
                assigned_submodule: submodule,
                status: NodeStatus::Pending,
                ..node.clone()
            });
        }
        UserEdit::ToggleLeaf { target, is_leaf: false, .. } => {
            let node = garden.node(*target)?;
            if node.kind != NodeKind::PlanStep {
                return Err(OrchestratorError::KindViolation(format!("{target} is a {:?}, not a plan step", node.kind)));
            }
            if !node.is_leaf {
                return Ok(plan);
            }
            if garden.depth(*target)? >= garden.config().max_depth {
                return Err(OrchestratorError::Precondition(format!("{target} is at the depth bound and must stay a leaf")));
            }
            plan.remove_subtree(garden, *target)?;
            taint_later(&mut plan, garden, *target)?;
            plan.modify(GardenNode {
                is_leaf: false,
                assigned_submodule: None,
                status: NodeStatus::Pending,
                ..node.clone()
            });
        }
        UserEdit::EditFeedback { target, feedback } => {
            let node = garden.node(*target)?;
            if node.kind != NodeKind::Evaluation {
                return Err(OrchestratorError::KindViolation(format!("{target} is a {:?}, not an evaluation", node.kind)));
            }
            let Payload::Evaluation(report) = &node.payload else {
                return Err(OrchestratorError::Precondition(format!("{target} carries no evaluation report")));
            };
            let feedback = non_empty(feedback, "feedback")?;
            let task = garden.owning_task(*target)?;
            let task_node = garden.node(task)?;
            let leaf = task_node.parent.expect("tasks hang off leaves");

            plan.remove_subtree(garden, *target)?;
            let mut report = report.clone();
            report.feedback = feedback.clone();
            report.verdict = Verdict::Fail;
            report.edited_by_user = true;
            plan.modify(GardenNode {
                text: feedback,
                status: NodeStatus::Failed,
                payload: Payload::Evaluation(report),
                ..node.clone()
            });
            if task_node.status != NodeStatus::Pending {
                plan.modify(GardenNode { status: NodeStatus::Pending, ..task_node.clone() });
            }
            taint_later(&mut plan, garden, leaf)?;
        }
    }
    Ok(plan)
}

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::render_leaf_marker;
use crate::garden::{Garden, NodeId, NodeKind, Payload};

pub const EXPAND_TAG: &str = "<<< EXPAND";

/// Renders the plan tree as an indented outline, one node per line, marking
/// `target` for expansion. When the full outline exceeds `budget` characters,
/// fully expanded subtrees off the target's ancestry are collapsed to their
/// root lines.
pub fn render_plan_tree(garden: &Garden, target: Option<NodeId>, budget: usize) -> String {
    let full = render(garden, target, &BTreeSet::new());
    if full.len() <= budget {
        return full;
    }
    let keep_open: BTreeSet<NodeId> = match target {
        Some(t) => ancestry(garden, t),
        None => BTreeSet::new(),
    };
    let collapsed: BTreeSet<NodeId> = garden
        .nodes()
        .filter(|n| n.kind == NodeKind::PlanStep && !keep_open.contains(&n.id))
        .filter(|n| garden.plan_children(n.id).next().is_some() && fully_expanded(garden, n.id))
        .map(|n| n.id)
        .collect();
    render(garden, target, &collapsed)
}

fn ancestry(garden: &Garden, id: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut cursor = Some(id);
    while let Some(id) = cursor {
        out.insert(id);
        cursor = garden.get(id).and_then(|n| n.parent);
    }
    out
}

fn fully_expanded(garden: &Garden, id: NodeId) -> bool {
    let node = &garden.get(id).expect("exists");
    let children: Vec<NodeId> = garden.plan_children(id).collect();
    if node.is_leaf {
        return true;
    }
    !children.is_empty() && children.iter().all(|c| fully_expanded(garden, *c))
}

fn render(garden: &Garden, target: Option<NodeId>, collapsed: &BTreeSet<NodeId>) -> String {
    let mut out = String::new();
    let Some(seed) = garden.seed() else { return out };
    let seed_node = garden.get(seed).expect("seed exists");
    let _ = write!(out, "GAME: {}", seed_node.text);
    if let Payload::Detail(outline) = &seed_node.payload {
        let _ = write!(out, " (outline: {outline})");
    }
    if target == Some(seed) {
        let _ = write!(out, "  {EXPAND_TAG}");
    }
    out.push('\n');
    render_children(garden, seed, 1, target, collapsed, &mut out);
    out
}

fn render_children(
    garden: &Garden,
    parent: NodeId,
    depth: usize,
    target: Option<NodeId>,
    collapsed: &BTreeSet<NodeId>,
    out: &mut String,
) {
    for (i, child) in garden.plan_children(parent).enumerate() {
        let node = garden.get(child).expect("child exists");
        let _ = write!(out, "{}{}. {}", "  ".repeat(depth), i + 1, node.text);
        if let Some(sub) = &node.assigned_submodule {
            let _ = write!(out, " {}", render_leaf_marker(sub));
        } else if node.is_leaf {
            out.push_str(" [LEAF]");
        }
        if target == Some(child) {
            let _ = write!(out, "  {EXPAND_TAG}");
        }
        if collapsed.contains(&child) {
            let hidden = garden
                .descendants(child)
                .map(|d| d.iter().filter(|n| garden.get(**n).is_some_and(|x| x.kind == NodeKind::PlanStep)).count())
                .unwrap_or(0);
            let _ = write!(out, " (+{hidden} sub-steps not shown)");
            out.push('\n');
            continue;
        }
        out.push('\n');
        render_children(garden, child, depth + 1, target, collapsed, out);
    }
}

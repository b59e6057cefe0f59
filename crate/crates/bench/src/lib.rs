//! Fixtures shared by the benchmarks.

use gardener_core::garden::{Garden, GardenConfig, NodeId, NodeKind, NodeStatus};

/// A full plan tree of the given branching and depth. Every leaf carries a
/// pending task with `attempts` attempt/evaluation pairs below it.
pub fn full_garden(branching: u32, depth: u32, attempts: usize) -> Garden {
    let config = GardenConfig { max_depth: depth + 1, max_branching: branching, ..GardenConfig::default() };
    let mut garden = Garden::new(config).expect("valid config");
    let seed = garden.add_seed("a benchmark meadow").expect("fresh garden");
    let mut level = vec![seed];
    for d in 1..=depth {
        let mut next = Vec::new();
        for parent in level {
            succeed(&mut garden, parent);
            for c in 0..branching {
                let leaf = d == depth;
                let submodule = leaf.then_some("code_generator");
                let id = garden
                    .add_child(parent, NodeKind::PlanStep, &format!("step {parent}.{c}"), leaf, submodule)
                    .expect("within bounds");
                next.push(id);
            }
        }
        level = next;
    }
    for leaf in level {
        let task = garden.add_child(leaf, NodeKind::Task, "task", false, None).expect("leaf accepts a task");
        succeed(&mut garden, leaf);
        let mut tail = task;
        for _ in 0..attempts {
            let a = garden.add_child(tail, NodeKind::CodeAttempt, "attempt", false, None).expect("chain");
            tail = garden.add_child(a, NodeKind::Evaluation, "needs work", false, None).expect("chain");
        }
    }
    garden
}

fn succeed(garden: &mut Garden, id: NodeId) {
    let mut node = garden.node(id).expect("exists").clone();
    node.status = NodeStatus::Succeeded;
    garden.update_node(node).expect("status change is valid");
}

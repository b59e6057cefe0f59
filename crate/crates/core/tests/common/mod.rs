#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gardener_core::assets::{
    build_index, AssetOrigin, AssetRecord, AssetRegistry, FixtureImageToMesh, FixtureTextToImage, HashingEmbedder,
    LocalFileSource,
};
use gardener_core::codegen::{CodeBundle, EvaluationReport, PipelineAttempt, SourceStage, Stage, Verdict};
use gardener_core::engine::{MockEngine, MockScenario, Workspace};
use gardener_core::garden::{Garden, GardenConfig, NodeId, NodeKind, NodeStatus, Payload};
use gardener_core::orchestrator::{Services, UserEdit};
use gardener_core::persistence::{replay_events, EventPayload, GardenEvent};
use gardener_core::planner::{default_roster, TaskSpec};
use gardener_core::provider::ReplayProvider;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

pub fn sheep_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sheep")
}

pub fn sheep_config() -> GardenConfig {
    GardenConfig { max_depth: 3, max_branching: 3, max_code_attempts: 3, submodule_roster: default_roster() }
}

pub const SHEEP_SEED: &str = "a sheep grazing on a grassy hillside";

pub struct Fixture {
    pub provider: Arc<ReplayProvider>,
    pub engine: Arc<MockEngine>,
    pub services: Services,
}

/// Replay script, mock engine and asset services for the sheep scenario.
pub fn sheep_fixture(workspace: &Workspace) -> Fixture {
    let dir = sheep_dir();
    let provider = Arc::new(ReplayProvider::from_dir(&dir.join("script")).unwrap());
    let scenario = MockScenario::from_json(&fs::read_to_string(dir.join("engine.json")).unwrap()).unwrap();
    let engine = Arc::new(MockEngine::new(scenario).with_workspace(workspace.clone()));
    let embedder = HashingEmbedder::new(64);
    let index = build_index(&dir.join("library/manifest.tsv"), &embedder).unwrap();
    let mut services = Services::new(provider.clone(), engine.clone());
    services.embedder = Arc::new(embedder);
    services.asset_index = Some(Arc::new(index));
    services.asset_source = Arc::new(LocalFileSource::new(dir.join("library")));
    services.text_to_image = Arc::new(FixtureTextToImage::new(b"\x89PNG\r\n\x1a\ngrass".to_vec()));
    services.image_to_mesh = Arc::new(FixtureImageToMesh::new(b"glTF\x02\x00\x00\x00grass".to_vec()));
    Fixture { provider, engine, services }
}

#[derive(Debug, Deserialize)]
pub struct Manifest {
    pub node_count: usize,
    pub counts: BTreeMap<String, usize>,
    pub leaf_submodules: Vec<String>,
    pub attempts_per_task: Vec<usize>,
    pub asset_origins: Vec<String>,
    pub expansion_depths: Vec<u32>,
}

pub fn sheep_manifest() -> Manifest {
    serde_json::from_str(&fs::read_to_string(sheep_dir().join("manifest.json")).unwrap()).unwrap()
}

pub fn kind_status_counts(garden: &Garden) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for node in garden.nodes() {
        *out.entry(format!("{:?}/{:?}", node.kind, node.status)).or_default() += 1;
    }
    out
}

/// Replays a log and compares its canonical document with the live one.
pub fn replay_matches(events: &[GardenEvent], live_document: &str) -> Result<(), String> {
    let replayed = replay_events(events).map_err(|e| e.to_string())?;
    let doc = replayed.document().ok_or("replayed log has no garden")?;
    if doc == live_document {
        Ok(())
    } else {
        Err("replayed document differs from the live one".into())
    }
}

/// Deletions must name a backup that was created earlier and holds the node.
pub fn deletions_are_backed_up(events: &[GardenEvent]) -> Result<(), String> {
    let mut backups: BTreeMap<&str, BTreeSet<NodeId>> = BTreeMap::new();
    for event in events {
        match &event.payload {
            EventPayload::BackupCreated { backup } => {
                backups.insert(&backup.backup_id, backup.nodes.iter().map(|n| n.id).collect());
            }
            EventPayload::NodeDeleted { id, backup_id } => {
                if !backups.get(backup_id.as_str()).is_some_and(|ids| ids.contains(id)) {
                    return Err(format!("seq {}: {id} deleted without a prior backup", event.seq));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Random gardens

fn report(rng: &mut StdRng) -> EvaluationReport {
    let verdict = if rng.gen_bool(0.3) { Verdict::Pass } else { Verdict::Fail };
    EvaluationReport {
        verdict,
        feedback: format!("feedback {}", rng.gen::<u16>()),
        source_stage: *[SourceStage::Compile, SourceStage::Placement, SourceStage::Crash, SourceStage::Visual]
            .choose(rng)
            .unwrap(),
        edited_by_user: false,
    }
}

fn attempt(index: u32, verdict: Verdict) -> PipelineAttempt {
    PipelineAttempt {
        index,
        bundle: CodeBundle::default(),
        layout: None,
        stage_reached: Stage::VisuallyEvaluated,
        verdict,
        feedback: String::new(),
        screenshots: Vec::new(),
        compiled: true,
    }
}

fn set(garden: &mut Garden, id: NodeId, status: NodeStatus, payload: Payload) {
    let mut node = garden.node(id).unwrap().clone();
    node.status = status;
    node.payload = payload;
    garden.update_node(node).unwrap();
}

/// A garden of at most `max_nodes` nodes built straight through the graph
/// API: a bounded plan tree, tasks on most leaves, and implementation
/// chains of random length. Also returns the asset records its artifacts
/// produced.
pub fn random_garden(rng: &mut StdRng, max_nodes: usize) -> (Garden, AssetRegistry) {
    let config = GardenConfig {
        max_depth: rng.gen_range(1..=4),
        max_branching: rng.gen_range(1..=4),
        max_code_attempts: 3,
        submodule_roster: default_roster(),
    };
    let roster: Vec<String> = config.submodule_roster.iter().map(|s| s.name.clone()).collect();
    let mut garden = Garden::new(config.clone()).unwrap();
    let seed = garden.add_seed("random seed").unwrap();
    let mut registry = AssetRegistry::new();
    let mut queue = std::collections::VecDeque::from([(seed, 0u32)]);
    let mut leaves = Vec::new();

    while let Some((id, depth)) = queue.pop_front() {
        if garden.len() >= max_nodes || rng.gen_bool(0.15) {
            continue;
        }
        set(&mut garden, id, NodeStatus::Succeeded, Payload::None);
        let children = rng.gen_range(1..=config.max_branching);
        for c in 0..children {
            if garden.len() >= max_nodes {
                break;
            }
            let child_depth = depth + 1;
            let leaf = child_depth >= config.max_depth || rng.gen_bool(0.4);
            let submodule = leaf.then(|| roster.choose(rng).unwrap().clone());
            let child = garden
                .add_child(id, NodeKind::PlanStep, &format!("step {id}.{c}"), leaf, submodule.as_deref())
                .unwrap();
            if leaf {
                leaves.push(child);
            } else {
                queue.push_back((child, child_depth));
            }
        }
    }

    for leaf in leaves {
        if garden.len() >= max_nodes || rng.gen_bool(0.25) {
            continue;
        }
        let submodule = garden.node(leaf).unwrap().assigned_submodule.clone().unwrap();
        let task = garden.add_child(leaf, NodeKind::Task, "task", false, None).unwrap();
        let spec = TaskSpec { leaf_id: leaf, submodule: submodule.clone(), prompt_parts: BTreeMap::new(), order_index: 0 };
        set(&mut garden, task, NodeStatus::Pending, Payload::Task(spec));
        set(&mut garden, leaf, NodeStatus::Succeeded, Payload::None);
        let code = submodule == "code_generator" || submodule == "procedural_mesh";
        let mut tail = task;
        let mut status = NodeStatus::Pending;
        if code {
            for index in 1..=rng.gen_range(0..=3u32) {
                if garden.len() + 2 > max_nodes {
                    break;
                }
                let r = report(rng);
                let node_status = if r.verdict == Verdict::Pass { NodeStatus::Succeeded } else { NodeStatus::Failed };
                let a = garden.add_child(tail, NodeKind::CodeAttempt, "attempt", false, None).unwrap();
                set(&mut garden, a, node_status, Payload::Attempt(attempt(index, r.verdict)));
                let e = garden.add_child(a, NodeKind::Evaluation, &r.feedback, false, None).unwrap();
                set(&mut garden, e, node_status, Payload::Evaluation(r.clone()));
                tail = e;
                status = match (r.verdict, index) {
                    (Verdict::Pass, _) => NodeStatus::Succeeded,
                    (_, 3) => NodeStatus::Failed,
                    _ => NodeStatus::InProgress,
                };
                if r.verdict == Verdict::Pass {
                    break;
                }
            }
        } else if rng.gen_bool(0.7) && garden.len() < max_nodes {
            let a = garden.add_child(tail, NodeKind::AssetArtifact, "asset", false, None).unwrap();
            set(&mut garden, a, NodeStatus::Succeeded, Payload::None);
            registry
                .insert(AssetRecord {
                    asset_id: format!("asset-{a}"),
                    display_name: "asset".into(),
                    mesh_path: format!("assets/asset-{a}.glb"),
                    origin: if rng.gen_bool(0.5) { AssetOrigin::Downloaded } else { AssetOrigin::Generated },
                    preview_image: None,
                    origin_node: Some(a),
                    engine_ref: Some(format!("/Game/Imported/asset-{a}")),
                })
                .unwrap();
            status = NodeStatus::Succeeded;
        }
        let spec = match &garden.node(task).unwrap().payload {
            Payload::Task(s) => s.clone(),
            _ => unreachable!(),
        };
        set(&mut garden, task, status, Payload::Task(spec));
    }
    garden.validate().unwrap();
    (garden, registry)
}

/// A random edit against the current garden; mostly well-formed, sometimes
/// aimed at a node of the wrong kind.
pub fn random_edit(rng: &mut StdRng, garden: &Garden) -> UserEdit {
    let nodes: Vec<_> = garden.nodes().collect();
    let of_kind = |k: NodeKind| nodes.iter().filter(|n| n.kind == k).map(|n| n.id).collect::<Vec<_>>();
    let plan_steps = of_kind(NodeKind::PlanStep);
    let evaluations = of_kind(NodeKind::Evaluation);
    let any = nodes.choose(rng).unwrap().id;
    match rng.gen_range(0..10) {
        0..=2 if !plan_steps.is_empty() => {
            UserEdit::ToggleLeaf { target: *plan_steps.choose(rng).unwrap(), is_leaf: true, submodule: None }
        }
        3..=4 if !plan_steps.is_empty() => {
            UserEdit::ToggleLeaf { target: *plan_steps.choose(rng).unwrap(), is_leaf: false, submodule: None }
        }
        5..=7 if !evaluations.is_empty() => UserEdit::EditFeedback {
            target: *evaluations.choose(rng).unwrap(),
            feedback: format!("user says {}", rng.gen::<u16>()),
        },
        8 => UserEdit::EditNodeText { target: any, text: format!("renamed {}", rng.gen::<u16>()) },
        _ => {
            if rng.gen_bool(0.5) {
                UserEdit::ToggleLeaf { target: any, is_leaf: rng.gen_bool(0.5), submodule: None }
            } else {
                UserEdit::EditFeedback { target: any, feedback: "misdirected".into() }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force cascade oracle. Works only from parent pointers and sibling
// order, re-deriving everything from the rule definitions.

fn parent(garden: &Garden, id: NodeId) -> Option<NodeId> {
    garden.get(id).and_then(|n| n.parent)
}

fn is_below(garden: &Garden, id: NodeId, ancestor: NodeId) -> bool {
    let mut cursor = parent(garden, id);
    while let Some(p) = cursor {
        if p == ancestor {
            return true;
        }
        cursor = parent(garden, p);
    }
    false
}

/// Plan nodes in depth-first order, children sorted by `child_order`.
fn plan_dfs(garden: &Garden) -> Vec<NodeId> {
    fn visit(garden: &Garden, id: NodeId, out: &mut Vec<NodeId>) {
        out.push(id);
        let mut kids: Vec<_> = garden
            .nodes()
            .filter(|n| n.parent == Some(id) && matches!(n.kind, NodeKind::PlanStep))
            .map(|n| (n.child_order, n.id))
            .collect();
        kids.sort();
        for (_, k) in kids {
            visit(garden, k, out);
        }
    }
    let mut out = Vec::new();
    if let Some(seed) = garden.nodes().find(|n| n.kind == NodeKind::Seed) {
        visit(garden, seed.id, &mut out);
    }
    out
}

pub fn dfs_leaves(garden: &Garden) -> Vec<NodeId> {
    plan_dfs(garden)
        .into_iter()
        .filter(|id| {
            let n = garden.get(*id).unwrap();
            n.kind == NodeKind::PlanStep && n.is_leaf
        })
        .collect()
}

/// Implementation nodes of every task whose leaf comes after `anchor` and
/// everything below it in depth-first order.
fn later_chains(garden: &Garden, anchor: NodeId) -> BTreeSet<NodeId> {
    let order = plan_dfs(garden);
    let pos = order.iter().position(|id| *id == anchor).unwrap();
    let later_leaves: BTreeSet<NodeId> = order[pos + 1..]
        .iter()
        .copied()
        .filter(|id| !is_below(garden, *id, anchor))
        .filter(|id| garden.get(*id).unwrap().is_leaf)
        .collect();
    garden
        .nodes()
        .filter(|n| n.kind.is_implementation())
        .filter(|n| later_leaves.iter().any(|leaf| is_below(garden, n.id, *leaf)))
        .map(|n| n.id)
        .collect()
}

fn below(garden: &Garden, root: NodeId) -> BTreeSet<NodeId> {
    garden.nodes().filter(|n| is_below(garden, n.id, root)).map(|n| n.id).collect()
}

/// Expected removal set, or `None` when the edit must be rejected.
pub fn oracle_removed(garden: &Garden, edit: &UserEdit) -> Option<BTreeSet<NodeId>> {
    match edit {
        UserEdit::ToggleLeaf { target, is_leaf, .. } => {
            let node = garden.get(*target)?;
            if node.kind != NodeKind::PlanStep {
                return None;
            }
            if node.is_leaf == *is_leaf {
                return Some(BTreeSet::new());
            }
            if !is_leaf {
                let mut depth = 0;
                let mut cursor = node.parent;
                while let Some(p) = cursor {
                    depth += 1;
                    cursor = parent(garden, p);
                }
                if depth >= garden.config().max_depth {
                    return None;
                }
            }
            let mut out = below(garden, *target);
            out.extend(later_chains(garden, *target));
            Some(out)
        }
        UserEdit::EditFeedback { target, .. } => {
            let node = garden.get(*target)?;
            if node.kind != NodeKind::Evaluation {
                return None;
            }
            let mut cursor = node.parent;
            let mut leaf = None;
            while let Some(p) = cursor {
                let n = garden.get(p).unwrap();
                if n.kind == NodeKind::PlanStep {
                    leaf = Some(p);
                    break;
                }
                cursor = n.parent;
            }
            let mut out = below(garden, *target);
            out.extend(later_chains(garden, leaf?));
            Some(out)
        }
        UserEdit::EditNodeText { target, .. } => garden.get(*target).map(|_| BTreeSet::new()),
        UserEdit::SetMode { .. } | UserEdit::CompileAndRunAt { .. } => None,
    }
}

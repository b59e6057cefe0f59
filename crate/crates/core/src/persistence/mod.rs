//! Garden documents, the append-only event log and cascade backups.
//!
//! Every mutation of a garden is a [`GardenEvent`] applied through
//! [`GardenState::apply`]; replaying `events.log` therefore rebuilds the
//! exact live state.

mod log;
mod state;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use log::{replay_events, EventLog};
pub use state::GardenState;

use crate::assets::{AssetError, AssetRecord, AssetRegistry};
use crate::engine::Workspace;
use crate::garden::{Garden, GardenConfig, GardenError, GardenNode, Mode, NodeId, FrontierItem};
use crate::orchestrator::UserEdit;
use crate::provider::AgentRole;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistenceError {
    #[error("corrupt document: {0}")]
    CorruptDocument(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("event sequence gap: expected seq {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("unknown backup {0:?}")]
    UnknownBackup(String),
    #[error("backup {backup} cannot be restored: {reason}")]
    ConflictingIds { backup: String, reason: String },
    #[error("event rejected: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Garden(#[from] GardenError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PersistenceError {
    fn from(e: std::io::Error) -> Self {
        PersistenceError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    System,
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineOp {
    Compile,
    Run,
    Import,
    Launch,
}

/// Full state of every node and asset an edit removed or changed, enough to
/// put them back without the live garden.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackupBundle {
    pub backup_id: String,
    pub edit_ref: String,
    /// Removed nodes in pre-order (parents before children).
    pub nodes: Vec<GardenNode>,
    /// States, before the edit, of nodes the edit changed but kept.
    pub modified: Vec<GardenNode>,
    /// Retracted registry entries with their registry positions.
    pub assets: Vec<(usize, AssetRecord)>,
}

impl BackupBundle {
    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }

    pub fn save(&self, workspace: &Workspace) -> Result<(), PersistenceError> {
        let dir = workspace.backups_dir().join(&self.backup_id);
        fs::create_dir_all(&dir)?;
        let text = serde_json::to_string_pretty(self).expect("backup serializes");
        fs::write(dir.join("bundle.json"), text)?;
        Ok(())
    }

    pub fn load(workspace: &Workspace, backup_id: &str) -> Result<Self, PersistenceError> {
        let path = workspace.backups_dir().join(backup_id).join("bundle.json");
        let text = fs::read_to_string(&path).map_err(|_| PersistenceError::UnknownBackup(backup_id.into()))?;
        serde_json::from_str(&text).map_err(|e| PersistenceError::CorruptDocument(e.to_string()))
    }
}

/// Summary of one model call, kept for audit and for resuming replay runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCallRecord {
    pub role: AgentRole,
    pub prompt_hash: String,
    pub images: usize,
    pub response_chars: usize,
    pub ok: bool,
    #[serde(default)]
    pub error: Option<String>,
    /// Whether the call used up a scripted response, for resuming replays.
    #[serde(default = "yes")]
    pub consumed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCallRecord {
    pub op: EngineOp,
    pub ok: bool,
    #[serde(default)]
    pub task: Option<NodeId>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default = "yes")]
    pub consumed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    GardenCreated { garden_id: String, config: GardenConfig },
    NodeAdded { node: GardenNode },
    NodeUpdated { node: GardenNode },
    NodeDeleted { id: NodeId, backup_id: String },
    BackupCreated { backup: BackupBundle },
    BackupRestored { backup_id: String },
    AssetRegistered { record: AssetRecord },
    AssetRetracted { asset_id: String, backup_id: String },
    ModeChanged { mode: Mode },
    ProviderCall { call: ProviderCallRecord },
    EngineCall { call: EngineCallRecord },
    WorkStarted { item: FrontierItem },
    WorkFinished { item: FrontierItem },
    EditApplied { edit: UserEdit, removed: Vec<NodeId>, backup_id: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GardenEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub actor: Actor,
    pub payload: EventPayload,
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema_version: u32,
    garden_id: String,
    garden: Garden,
    assets: AssetRegistry,
}

/// Canonical `garden.json` text.
pub fn save_garden(garden_id: &str, garden: &Garden, assets: &AssetRegistry) -> String {
    #[derive(Serialize)]
    struct DocumentRef<'a> {
        schema_version: u32,
        garden_id: &'a str,
        garden: &'a Garden,
        assets: &'a AssetRegistry,
    }
    serde_json::to_string_pretty(&DocumentRef { schema_version: SCHEMA_VERSION, garden_id, garden, assets })
        .expect("garden serializes")
}

pub fn load_garden(text: &str) -> Result<(String, Garden, AssetRegistry), PersistenceError> {
    #[derive(Deserialize)]
    struct Header {
        schema_version: u32,
    }
    let header: Header =
        serde_json::from_str(text).map_err(|e| PersistenceError::CorruptDocument(e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(PersistenceError::VersionMismatch { expected: SCHEMA_VERSION, found: header.schema_version });
    }
    let doc: Document = serde_json::from_str(text).map_err(|e| PersistenceError::CorruptDocument(e.to_string()))?;
    doc.garden.validate().map_err(|e| PersistenceError::CorruptDocument(e.to_string()))?;
    Ok((doc.garden_id, doc.garden, doc.assets))
}

pub fn load_garden_file(path: &Path) -> Result<(String, Garden, AssetRegistry), PersistenceError> {
    load_garden(&fs::read_to_string(path)?)
}

/// Hex sha256 of the canonical document.
pub fn state_hash(garden_id: &str, garden: &Garden, assets: &AssetRegistry) -> String {
    hex::encode(Sha256::digest(save_garden(garden_id, garden, assets).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garden::NodeKind;

    fn sample() -> Garden {
        let mut g = Garden::new(GardenConfig::default()).unwrap();
        let root = g.add_seed("a sheep grazing on a grassy hillside").unwrap();
        let a = g.add_child(root, NodeKind::PlanStep, "terrain", false, None).unwrap();
        g.add_child(a, NodeKind::PlanStep, "hills", true, Some("procedural_mesh")).unwrap();
        g
    }

    #[test]
    fn document_round_trip() {
        let g = sample();
        let text = save_garden("g1", &g, &AssetRegistry::new());
        let (id, back, assets) = load_garden(&text).unwrap();
        assert_eq!(id, "g1");
        assert_eq!(back, g);
        assert!(assets.is_empty());
        assert_eq!(save_garden("g1", &back, &assets), text);
    }

    #[test]
    fn corrupt_and_version() {
        let text = save_garden("g1", &sample(), &AssetRegistry::new());
        assert!(matches!(load_garden(&text[..text.len() / 2]), Err(PersistenceError::CorruptDocument(_))));
        let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert_eq!(
            load_garden(&future),
            Err(PersistenceError::VersionMismatch { expected: 1, found: 2 })
        );
    }
}

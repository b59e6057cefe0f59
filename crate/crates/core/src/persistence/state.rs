use std::collections::BTreeMap;

use super::{save_garden, state_hash, BackupBundle, EventPayload, PersistenceError};
use crate::assets::AssetRegistry;
use crate::garden::{Garden, NodeId};

/// Everything the event log describes: the garden, the asset registry and
/// the backups taken so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GardenState {
    garden_id: String,
    garden: Option<Garden>,
    registry: AssetRegistry,
    backups: BTreeMap<String, BackupBundle>,
    in_progress: Option<NodeId>,
}

impl GardenState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn garden_id(&self) -> &str {
        &self.garden_id
    }

    pub fn garden(&self) -> Option<&Garden> {
        self.garden.as_ref()
    }

    pub fn registry(&self) -> &AssetRegistry {
        &self.registry
    }

    pub fn backup(&self, backup_id: &str) -> Option<&BackupBundle> {
        self.backups.get(backup_id)
    }

    pub fn backups(&self) -> impl Iterator<Item = &BackupBundle> {
        self.backups.values()
    }

    /// Node whose work unit is running, if any.
    pub fn in_progress(&self) -> Option<NodeId> {
        self.in_progress
    }

    /// Canonical `garden.json` text, or `None` before the garden exists.
    pub fn document(&self) -> Option<String> {
        self.garden.as_ref().map(|g| save_garden(&self.garden_id, g, &self.registry))
    }

    pub fn hash(&self) -> Option<String> {
        self.garden.as_ref().map(|g| state_hash(&self.garden_id, g, &self.registry))
    }

    fn garden_mut(&mut self) -> Result<&mut Garden, PersistenceError> {
        self.garden.as_mut().ok_or_else(|| PersistenceError::InvalidEvent("garden not created yet".into()))
    }

    /// The only way state changes. Fails without side effects when the event
    /// does not fit the current state.
    pub fn apply(&mut self, payload: &EventPayload) -> Result<(), PersistenceError> {
        match payload {
            EventPayload::GardenCreated { garden_id, config } => {
                if self.garden.is_some() {
                    return Err(PersistenceError::InvalidEvent("garden already created".into()));
                }
                self.garden = Some(Garden::new(config.clone())?);
                self.garden_id = garden_id.clone();
            }
            EventPayload::NodeAdded { node } => self.garden_mut()?.insert_node(node.clone())?,
            EventPayload::NodeUpdated { node } => self.garden_mut()?.update_node(node.clone())?,
            EventPayload::NodeDeleted { id, backup_id } => {
                let backed_up = self.backups.get(backup_id).is_some_and(|b| b.contains_node(*id));
                if !backed_up {
                    return Err(PersistenceError::InvalidEvent(format!("{id} deleted without a backup in {backup_id}")));
                }
                self.garden_mut()?.remove_node(*id)?;
            }
            EventPayload::BackupCreated { backup } => {
                if self.backups.contains_key(&backup.backup_id) {
                    return Err(PersistenceError::InvalidEvent(format!("backup {} exists", backup.backup_id)));
                }
                self.backups.insert(backup.backup_id.clone(), backup.clone());
            }
            EventPayload::BackupRestored { backup_id } => self.restore(backup_id)?,
            EventPayload::AssetRegistered { record } => self.registry.insert(record.clone())?,
            EventPayload::AssetRetracted { asset_id, backup_id } => {
                let backed_up = self
                    .backups
                    .get(backup_id)
                    .is_some_and(|b| b.assets.iter().any(|(_, r)| &r.asset_id == asset_id));
                if !backed_up {
                    return Err(PersistenceError::InvalidEvent(format!("{asset_id} retracted without a backup")));
                }
                self.registry
                    .retract(asset_id)
                    .ok_or_else(|| PersistenceError::InvalidEvent(format!("unknown asset {asset_id}")))?;
            }
            EventPayload::ModeChanged { mode } => self.garden_mut()?.set_mode(*mode),
            EventPayload::WorkStarted { item } => self.in_progress = Some(item.node()),
            EventPayload::WorkFinished { .. } => self.in_progress = None,
            EventPayload::ProviderCall { .. } | EventPayload::EngineCall { .. } | EventPayload::EditApplied { .. } => {}
        }
        Ok(())
    }

    /// Puts a backup's nodes and assets back: prior states of changed nodes
    /// first, then removed nodes parents-first, then registry entries.
    fn restore(&mut self, backup_id: &str) -> Result<(), PersistenceError> {
        let backup = self.backups.get(backup_id).ok_or_else(|| PersistenceError::UnknownBackup(backup_id.into()))?;
        let conflict = |reason: String| PersistenceError::ConflictingIds { backup: backup_id.to_string(), reason };
        let mut garden = self.garden.clone().ok_or_else(|| conflict("garden not created".into()))?;
        if let Some(present) = backup.nodes.iter().find(|n| garden.contains(n.id)) {
            return Err(conflict(format!("{} is already present", present.id)));
        }
        let mut registry = self.registry.clone();
        for prior in &backup.modified {
            garden.update_node(prior.clone()).map_err(|e| conflict(e.to_string()))?;
        }
        for node in &backup.nodes {
            garden.insert_node(node.clone()).map_err(|e| conflict(e.to_string()))?;
        }
        for (pos, record) in &backup.assets {
            registry.insert_at(*pos, record.clone()).map_err(|e| conflict(e.to_string()))?;
        }
        self.garden = Some(garden);
        self.registry = registry;
        Ok(())
    }
}

//! Asset submodules: retrieval from a precomputed library index, generation
//! through a text-to-image and image-to-mesh chain, and the project registry
//! that code generation reads from.

mod embed;
mod index;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbeddingProvider, HashingEmbedder, HttpEmbedder};
pub use index::{
    build_index, cosine_distance, parse_manifest, AssetIndex, EmbeddingVector, IndexEntry, ManifestRecord,
    INDEX_VERSION,
};

use crate::engine::{EngineAdapter, Workspace};
use crate::garden::NodeId;

/// Appended to every generative mesh prompt so the image model produces a
/// single isolated object that the mesh model can lift.
pub const AUGMENTATION_DIRECTIVE: &str = "Show a single object, fully visible and centered in frame, \
posed against a blank plain white background, with no other objects, no ground plane and no cropping.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssetError {
    #[error("asset index is empty")]
    EmptyIndex,
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding provider error: {0}")]
    Embedding(String),
    #[error("asset id {0:?} is already registered")]
    DuplicateAssetId(String),
    #[error("mesh file missing: {0}")]
    MissingFile(PathBuf),
    #[error("fetch failed: {0}")]
    Fetch(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssetOrigin {
    Downloaded,
    Generated,
    Procedural,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: String,
    pub display_name: String,
    /// Relative to the garden workspace.
    pub mesh_path: String,
    pub origin: AssetOrigin,
    pub preview_image: Option<String>,
    /// The implementation node that produced the record.
    pub origin_node: Option<NodeId>,
    /// Engine-side reference returned by the import hook.
    pub engine_ref: Option<String>,
}

/// Assets available to code generation, in registration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetRegistry {
    records: Vec<AssetRecord>,
}

impl AssetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[AssetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, asset_id: &str) -> Option<&AssetRecord> {
        self.records.iter().find(|r| r.asset_id == asset_id)
    }

    /// Checks a record against the registry and the workspace files.
    pub fn check(&self, record: &AssetRecord, workspace_root: &Path) -> Result<(), AssetError> {
        if self.get(&record.asset_id).is_some() {
            return Err(AssetError::DuplicateAssetId(record.asset_id.clone()));
        }
        let mesh = workspace_root.join(&record.mesh_path);
        if !mesh.is_file() {
            return Err(AssetError::MissingFile(mesh));
        }
        Ok(())
    }

    pub fn register(&mut self, record: AssetRecord, workspace_root: &Path) -> Result<(), AssetError> {
        self.check(&record, workspace_root)?;
        self.records.push(record);
        Ok(())
    }

    /// Inserts without touching the file system; used when replaying events
    /// and restoring backups.
    pub fn insert(&mut self, record: AssetRecord) -> Result<(), AssetError> {
        if self.get(&record.asset_id).is_some() {
            return Err(AssetError::DuplicateAssetId(record.asset_id));
        }
        self.records.push(record);
        Ok(())
    }

    /// Inserts at a registry position (clamped), restoring original order.
    pub fn insert_at(&mut self, pos: usize, record: AssetRecord) -> Result<(), AssetError> {
        if self.get(&record.asset_id).is_some() {
            return Err(AssetError::DuplicateAssetId(record.asset_id));
        }
        self.records.insert(pos.min(self.records.len()), record);
        Ok(())
    }

    pub fn position(&self, asset_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.asset_id == asset_id)
    }

    pub fn retract(&mut self, asset_id: &str) -> Option<AssetRecord> {
        let pos = self.records.iter().position(|r| r.asset_id == asset_id)?;
        Some(self.records.remove(pos))
    }

    /// Records produced by any of `nodes`.
    pub fn produced_by<'a>(&'a self, nodes: &'a [NodeId]) -> impl Iterator<Item = &'a AssetRecord> + 'a {
        self.records.iter().filter(move |r| r.origin_node.is_some_and(|n| nodes.contains(&n)))
    }
}

/// Step of an asset task, used to say where it failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetStage {
    Embed,
    Retrieve,
    Fetch,
    TextToImage,
    ImageToMesh,
    Import,
    Register,
}

/// Payload of an asset artifact node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetOutcome {
    /// Description or augmented prompt that drove the task.
    pub query: String,
    pub record: Option<AssetRecord>,
    /// Set when the record was already in the registry and was reused.
    #[serde(default)]
    pub reused: bool,
    pub failed_stage: Option<AssetStage>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{stage:?} failed: {message}")]
pub struct AssetFailure {
    pub stage: AssetStage,
    pub message: String,
}

impl AssetFailure {
    fn at(stage: AssetStage, message: impl ToString) -> Self {
        Self { stage, message: message.to_string() }
    }
}

/// Copies library assets into the workspace.
pub trait AssetSource: Send + Sync {
    fn fetch(&self, source_uri: &str, dest: &Path) -> Result<(), AssetError>;
}

/// Resolves `file://` URIs and plain paths, relative ones against `base`.
#[derive(Clone, Debug)]
pub struct LocalFileSource {
    base: PathBuf,
}

impl LocalFileSource {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self { base: base.into() }
    }
}

impl AssetSource for LocalFileSource {
    fn fetch(&self, source_uri: &str, dest: &Path) -> Result<(), AssetError> {
        let raw = source_uri.strip_prefix("file://").unwrap_or(source_uri);
        let src = self.base.join(raw);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| AssetError::Io(e.to_string()))?;
        }
        fs::copy(&src, dest).map_err(|e| AssetError::Fetch(format!("{}: {e}", src.display())))?;
        Ok(())
    }
}

pub trait TextToImage: Send + Sync {
    /// Returns encoded image bytes (PNG).
    fn generate(&self, prompt: &str) -> Result<Vec<u8>, String>;
}

pub trait ImageToMesh: Send + Sync {
    /// Returns GLB bytes.
    fn convert(&self, image: &[u8]) -> Result<Vec<u8>, String>;
}

/// Returns fixed bytes and records every prompt it sees.
#[derive(Debug, Default)]
pub struct FixtureTextToImage {
    pub image: Vec<u8>,
    pub error: Option<String>,
    prompts: Mutex<Vec<String>>,
}

impl FixtureTextToImage {
    pub fn new(image: Vec<u8>) -> Self {
        Self { image, ..Self::default() }
    }

    pub fn failing(message: &str) -> Self {
        Self { error: Some(message.into()), ..Self::default() }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl TextToImage for FixtureTextToImage {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>, String> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(self.image.clone()),
        }
    }
}

#[derive(Debug, Default)]
pub struct FixtureImageToMesh {
    pub mesh: Vec<u8>,
    pub error: Option<String>,
}

impl FixtureImageToMesh {
    pub fn new(mesh: Vec<u8>) -> Self {
        Self { mesh, error: None }
    }

    pub fn failing(message: &str) -> Self {
        Self { mesh: Vec::new(), error: Some(message.into()) }
    }
}

impl ImageToMesh for FixtureImageToMesh {
    fn convert(&self, _image: &[u8]) -> Result<Vec<u8>, String> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(self.mesh.clone()),
        }
    }
}

fn extension_of(uri: &str) -> &str {
    Path::new(uri).extension().and_then(|e| e.to_str()).unwrap_or("glb")
}

pub fn augment_prompt(prompt: &str) -> String {
    format!("{} {AUGMENTATION_DIRECTIVE}", prompt.trim())
}

/// Finds the library asset closest to `description`, copies it into the
/// workspace and imports it. A library asset already in the registry is
/// reused rather than fetched again.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_nearest_asset(
    description: &str,
    index: &AssetIndex,
    embedder: &dyn EmbeddingProvider,
    source: &dyn AssetSource,
    engine: &dyn EngineAdapter,
    workspace: &Workspace,
    registry: &AssetRegistry,
    origin_node: NodeId,
) -> Result<(AssetRecord, bool), AssetFailure> {
    let query = embedder.embed_text(description).map_err(|e| AssetFailure::at(AssetStage::Embed, e))?;
    let entry = index.nearest(&query).map_err(|e| AssetFailure::at(AssetStage::Retrieve, e))?;
    if let Some(existing) = registry.get(&entry.asset_id) {
        return Ok((existing.clone(), true));
    }
    let mesh_rel = format!("assets/{}.{}", entry.asset_id, extension_of(&entry.source_uri));
    let dest = workspace.resolve(&mesh_rel);
    source.fetch(&entry.source_uri, &dest).map_err(|e| AssetFailure::at(AssetStage::Fetch, e))?;
    let imported = engine.import_mesh(&dest).map_err(|e| AssetFailure::at(AssetStage::Import, e))?;
    let record = AssetRecord {
        asset_id: entry.asset_id.clone(),
        display_name: entry.asset_id.clone(),
        mesh_path: mesh_rel,
        origin: AssetOrigin::Downloaded,
        preview_image: None,
        origin_node: Some(origin_node),
        engine_ref: Some(imported.reference),
    };
    registry.check(&record, workspace.root()).map_err(|e| AssetFailure::at(AssetStage::Register, e))?;
    Ok((record, false))
}

/// Text to image to mesh, then import. The intermediate image becomes the
/// record's preview.
pub fn generate_mesh_chain(
    prompt: &str,
    text_to_image: &dyn TextToImage,
    image_to_mesh: &dyn ImageToMesh,
    engine: &dyn EngineAdapter,
    workspace: &Workspace,
    registry: &AssetRegistry,
    origin_node: NodeId,
    asset_id: &str,
) -> Result<AssetRecord, AssetFailure> {
    let augmented = augment_prompt(prompt);
    let image = text_to_image.generate(&augmented).map_err(|e| AssetFailure::at(AssetStage::TextToImage, e))?;
    let mesh = image_to_mesh.convert(&image).map_err(|e| AssetFailure::at(AssetStage::ImageToMesh, e))?;
    let preview_rel = format!("assets/{asset_id}.png");
    let mesh_rel = format!("assets/{asset_id}.glb");
    let write = |rel: &str, bytes: &[u8]| {
        let path = workspace.resolve(rel);
        fs::create_dir_all(path.parent().expect("has parent"))
            .and_then(|_| fs::write(&path, bytes))
            .map_err(|e| AssetFailure::at(AssetStage::Register, e))
    };
    write(&preview_rel, &image)?;
    write(&mesh_rel, &mesh)?;
    let imported = engine
        .import_mesh(&workspace.resolve(&mesh_rel))
        .map_err(|e| AssetFailure::at(AssetStage::Import, e))?;
    let record = AssetRecord {
        asset_id: asset_id.to_string(),
        display_name: prompt.trim().chars().take(60).collect(),
        mesh_path: mesh_rel,
        origin: AssetOrigin::Generated,
        preview_image: Some(preview_rel),
        origin_node: Some(origin_node),
        engine_ref: Some(imported.reference),
    };
    registry.check(&record, workspace.root()).map_err(|e| AssetFailure::at(AssetStage::Register, e))?;
    Ok(record)
}

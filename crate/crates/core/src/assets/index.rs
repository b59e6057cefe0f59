use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssetError, EmbeddingProvider};

pub const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, AssetError> {
        if values.is_empty() {
            return Err(AssetError::Embedding("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AssetError::Embedding("embedding has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }
}

/// `1 - cos(a, b)`, accumulated in f64. A zero vector is at distance 1 from
/// everything.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| *x as f64 * *y as f64).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        1.0
    } else {
        1.0 - dot / denom
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub asset_id: String,
    pub embedding: EmbeddingVector,
    pub source_uri: String,
}

/// Precomputed embeddings of a library's thumbnails. Queries scan every
/// entry, so results are exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetIndex {
    pub version: u32,
    pub dim: usize,
    entries: Vec<IndexEntry>,
    #[serde(skip)]
    ids: BTreeSet<String>,
}

impl AssetIndex {
    pub fn new(dim: usize) -> Self {
        Self { version: INDEX_VERSION, dim, entries: Vec::new(), ids: BTreeSet::new() }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), AssetError> {
        if entry.embedding.dim() != self.dim {
            return Err(AssetError::DimensionMismatch { expected: self.dim, found: entry.embedding.dim() });
        }
        if !self.ids.insert(entry.asset_id.clone()) {
            return Err(AssetError::DuplicateAssetId(entry.asset_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Entry with the least cosine distance to `query`; ties go to the
    /// lexicographically smallest asset id.
    pub fn nearest(&self, query: &EmbeddingVector) -> Result<&IndexEntry, AssetError> {
        if query.dim() != self.dim {
            return Err(AssetError::DimensionMismatch { expected: self.dim, found: query.dim() });
        }
        let mut best: Option<(f64, &IndexEntry)> = None;
        for entry in &self.entries {
            let d = cosine_distance(query, &entry.embedding);
            best = match best {
                Some((bd, be)) if bd < d || (bd == d && be.asset_id <= entry.asset_id) => Some((bd, be)),
                _ => Some((d, entry)),
            };
        }
        best.map(|(_, e)| e).ok_or(AssetError::EmptyIndex)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AssetError> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| AssetError::CorruptIndex(e.to_string()))?;
        if header.version != INDEX_VERSION {
            return Err(AssetError::CorruptIndex(format!("unsupported index version {}", header.version)));
        }
        let raw: AssetIndex = serde_json::from_str(text).map_err(|e| AssetError::CorruptIndex(e.to_string()))?;
        let mut index = AssetIndex::new(raw.dim);
        for entry in raw.entries {
            index.insert(entry)?;
        }
        Ok(index)
    }

    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let text = fs::read_to_string(path).map_err(|e| AssetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), AssetError> {
        fs::write(path, self.to_json()).map_err(|e| AssetError::Io(format!("{}: {e}", path.display())))
    }
}

/// One manifest line: `asset_id <TAB> thumbnail path <TAB> source uri`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub asset_id: String,
    pub thumbnail: String,
    pub source_uri: String,
}

/// Parses a tab-separated manifest. Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, AssetError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [id, thumb, uri] if !id.is_empty() && !thumb.is_empty() && !uri.is_empty() => {
                out.push(ManifestRecord {
                    asset_id: id.to_string(),
                    thumbnail: thumb.to_string(),
                    source_uri: uri.to_string(),
                });
            }
            _ => {
                return Err(AssetError::Manifest(format!(
                    "line {}: expected 3 tab-separated fields",
                    no + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Embeds every thumbnail listed in the manifest. Thumbnail paths are
/// relative to the manifest's directory.
pub fn build_index(manifest: &Path, embedder: &dyn EmbeddingProvider) -> Result<AssetIndex, AssetError> {
    let text = fs::read_to_string(manifest).map_err(|e| AssetError::Io(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut index = AssetIndex::new(embedder.dim());
    for record in parse_manifest(&text)? {
        let thumb = base.join(&record.thumbnail);
        let bytes = fs::read(&thumb).map_err(|e| AssetError::Io(format!("{}: {e}", thumb.display())))?;
        let embedding = embedder.embed_image(&bytes)?;
        index.insert(IndexEntry { asset_id: record.asset_id, embedding, source_uri: record.source_uri })?;
    }
    Ok(index)
}

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::codegen::{CodeBundle, LayoutSpec};
use crate::garden::NodeId;

/// On-disk layout of one garden:
///
/// ```text
/// <root>/garden.json
/// <root>/events.log
/// <root>/backups/<backup_id>/
/// <root>/source/
/// <root>/layouts/
/// <root>/assets/
/// <root>/screenshots/<task>/<attempt>/
/// <root>/sessions/<node>/
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates the directory skeleton.
    pub fn ensure(&self) -> io::Result<()> {
        for dir in [self.source_dir(), self.layouts_dir(), self.assets_dir(), self.backups_dir()] {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn garden_file(&self) -> PathBuf {
        self.root.join("garden.json")
    }

    pub fn events_file(&self) -> PathBuf {
        self.root.join("events.log")
    }

    pub fn backups_dir(&self) -> PathBuf {
        self.root.join("backups")
    }

    pub fn source_dir(&self) -> PathBuf {
        self.root.join("source")
    }

    pub fn layouts_dir(&self) -> PathBuf {
        self.root.join("layouts")
    }

    pub fn assets_dir(&self) -> PathBuf {
        self.root.join("assets")
    }

    pub fn screenshots_rel(task: NodeId, attempt: u32) -> String {
        format!("screenshots/{task}/{attempt}")
    }

    pub fn session_dir(&self, node: NodeId) -> PathBuf {
        self.root.join("sessions").join(node.to_string())
    }

    /// Resolves a workspace-relative path.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes every bundle file below `dir`, replacing what was there.
    pub fn write_bundle(dir: &Path, bundle: &CodeBundle) -> io::Result<()> {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::create_dir_all(dir)?;
        for (rel, text) in &bundle.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        Ok(())
    }

    /// Reads all files below `dir` back into a bundle.
    pub fn read_bundle(dir: &Path) -> io::Result<CodeBundle> {
        let mut bundle = CodeBundle::default();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(current) = stack.pop() {
            for entry in fs::read_dir(&current)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(dir)
                        .expect("walked from dir")
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join("/");
                    bundle.files.insert(rel, fs::read_to_string(&path)?);
                }
            }
        }
        Ok(bundle)
    }

    pub fn write_layout(path: &Path, layout: &LayoutSpec) -> io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, layout.to_canonical_json())
    }
}

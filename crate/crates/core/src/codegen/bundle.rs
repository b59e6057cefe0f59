use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CodegenError;

/// Generated source files keyed by project-relative path.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBundle {
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: Option<String>,
}

impl CodeBundle {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Hex sha256 over paths and contents in path order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (path, text) in &self.files {
            hasher.update(path.as_bytes());
            hasher.update([0u8]);
            hasher.update(text.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Names of every C++ class declared in the bundle.
    pub fn declared_classes(&self) -> BTreeSet<String> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"(?m)^\s*class\s+(?:[A-Z0-9_]+_API\s+)?([A-Za-z_]\w*)\s*(?:final\s*)?[:{]").unwrap()
        });
        self.files
            .values()
            .flat_map(|text| re.captures_iter(text).map(|c| c[1].to_string()))
            .collect()
    }

    /// The class to place when no layout is generated: the first Actor
    /// subclass, else the first declared class, else the first header's stem.
    pub fn primary_actor_class(&self) -> Option<String> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"class\s+(?:[A-Z0-9_]+_API\s+)?([A-Za-z_]\w*)\s*(?:final\s*)?:\s*public\s+AActor\b").unwrap()
        });
        let actor = self.files.values().find_map(|text| re.captures(text).map(|c| c[1].to_string()));
        actor
            .or_else(|| self.declared_classes().into_iter().next())
            .or_else(|| {
                self.files
                    .keys()
                    .find(|p| p.ends_with(".h"))
                    .and_then(|p| p.rsplit('/').next())
                    .map(|f| f.trim_end_matches(".h").to_string())
            })
    }

    /// Renders the bundle back into the annotated fence format.
    pub fn to_prompt_text(&self) -> String {
        self.files
            .iter()
            .map(|(path, text)| format!("```cpp\n// FILE: {path}\n{}\n```", text.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn file_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*//\s*FILE:\s*(\S.*?)\s*$").unwrap())
}

fn heading_path() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^#{1,6}\s*(?:[Ff]ile:\s*)?`?([\w./\\-]+\.[A-Za-z0-9]+)`?\s*$").unwrap()
    })
}

fn check_path(raw: &str) -> Result<String, CodegenError> {
    let path = raw.trim().trim_matches('`').replace('\\', "/");
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.as_bytes().get(1) == Some(&b':')
        || path.split('/').any(|seg| seg.is_empty() || seg == ".." || seg == ".");
    if bad {
        Err(CodegenError::PathViolation(raw.trim().to_string()))
    } else {
        Ok(path)
    }
}

/// Extracts path-annotated fenced blocks. A block is annotated either by a
/// `// FILE: <path>` first line (which is dropped from the file) or by a
/// `### <path>` line right before the fence. Unannotated blocks are skipped.
pub fn parse_code_files(response: &str) -> Result<CodeBundle, CodegenError> {
    let lines: Vec<&str> = response.lines().collect();
    let mut bundle = CodeBundle::default();
    let mut prose = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !lines[i].trim_start().starts_with("```") {
            prose.push(lines[i]);
            i += 1;
            continue;
        }
        let heading = lines[..i]
            .iter()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| heading_path().captures(l.trim()))
            .map(|c| c[1].to_string());
        let start = i + 1;
        let mut end = start;
        while end < lines.len() && !lines[end].trim_start().starts_with("```") {
            end += 1;
        }
        let body = &lines[start..end];
        let first = body.iter().position(|l| !l.trim().is_empty());
        let inline = first.and_then(|f| file_header().captures(body[f]).map(|c| (f, c[1].to_string())));
        let annotated = match (inline, heading) {
            (Some((f, path)), _) => Some((path, body[f + 1..].join("\n"))),
            (None, Some(path)) => Some((path, body.join("\n"))),
            (None, None) => None,
        };
        if let Some((path, text)) = annotated {
            let path = check_path(&path)?;
            bundle.files.insert(path, format!("{}\n", text.trim_matches('\n')));
        }
        i = end + 1;
    }
    if bundle.files.is_empty() {
        return Err(CodegenError::NoFilesFound);
    }
    let summary = prose
        .iter()
        .filter(|l| !heading_path().is_match(l.trim()))
        .copied()
        .collect::<Vec<_>>()
        .join("\n");
    let summary = summary.trim();
    if !summary.is_empty() {
        bundle.summary = Some(summary.to_string());
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FILES: &str = "Here is the sheep actor.\n\n```cpp\n// FILE: Source/Garden/Sheep.h\n#pragma once\nclass GARDEN_API ASheep : public AActor\n{\n};\n```\n\n### Source/Garden/Sheep.cpp\n```cpp\n#include \"Sheep.h\"\n```\n";

    #[test]
    fn both_annotation_styles() {
        let bundle = parse_code_files(TWO_FILES).unwrap();
        assert_eq!(bundle.files.len(), 2);
        assert!(bundle.files["Source/Garden/Sheep.h"].starts_with("#pragma once"));
        assert_eq!(bundle.files["Source/Garden/Sheep.cpp"], "#include \"Sheep.h\"\n");
        assert_eq!(bundle.summary.as_deref(), Some("Here is the sheep actor."));
        assert_eq!(bundle.primary_actor_class().as_deref(), Some("ASheep"));
    }

    #[test]
    fn traversal_is_rejected() {
        let text = "```cpp\n// FILE: ../escape.h\nint x;\n```";
        assert_eq!(parse_code_files(text), Err(CodegenError::PathViolation("../escape.h".into())));
        let abs = "```cpp\n// FILE: /etc/passwd\n```";
        assert!(matches!(parse_code_files(abs), Err(CodegenError::PathViolation(_))));
    }

    #[test]
    fn prose_only_has_no_files() {
        assert_eq!(parse_code_files("I cannot help with that."), Err(CodegenError::NoFilesFound));
        assert_eq!(parse_code_files("```cpp\nint x;\n```"), Err(CodegenError::NoFilesFound));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_code_files(TWO_FILES).unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.files.insert("Source/Garden/Extra.h".into(), String::new());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn prompt_text_round_trips() {
        let a = parse_code_files(TWO_FILES).unwrap();
        let b = parse_code_files(&a.to_prompt_text()).unwrap();
        assert_eq!(a.files, b.files);
    }
}

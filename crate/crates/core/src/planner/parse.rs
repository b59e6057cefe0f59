//! Parsers for planner and task-generator output.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{LeafMarker, PlanError};
use crate::garden::GardenConfig;

/// A restated outline plus an ordered step list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanParse {
    pub reformulation: String,
    pub steps: Vec<String>,
}

fn numbered() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\*\*)?(\d+)[.)](?:\*\*)?\s+(.+?)\s*$").unwrap())
}

fn bulleted() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*•]\s+(.+?)\s*$").unwrap())
}

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\[\s*LEAF\s*:\s*([^\]]*?)\s*\]\s*$").unwrap())
}

fn label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:#+\s*)?(?:\*\*)?(outline|detail)(?:\*\*)?\s*:\s*(.*)$").unwrap())
}

/// Parses an `OUTLINE:`/`DETAIL:` line followed by a numbered (or, failing
/// that, bulleted) list. Lines following a step that are neither list items
/// nor blank are folded into that step.
pub fn parse_plan(text: &str) -> Result<PlanParse, PlanError> {
    let lines: Vec<&str> = text.lines().collect();
    let use_numbers = lines.iter().any(|l| numbered().is_match(l));
    let item = |line: &str| -> Option<String> {
        if use_numbers {
            numbered().captures(line).map(|c| c[2].to_string())
        } else {
            bulleted().captures(line).map(|c| c[1].to_string())
        }
    };

    let mut reformulation = Vec::new();
    let mut steps: Vec<String> = Vec::new();
    let mut in_label = false;
    for line in &lines {
        if let Some(step) = item(line) {
            steps.push(step);
            in_label = false;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            in_label = false;
            continue;
        }
        if steps.is_empty() {
            if let Some(c) = label().captures(line) {
                reformulation.push(c[2].trim().to_string());
                in_label = true;
            } else if in_label {
                reformulation.push(trimmed.to_string());
            }
        } else if line.starts_with(char::is_whitespace) {
            let last = steps.last_mut().expect("non-empty");
            last.push(' ');
            last.push_str(trimmed);
        }
    }
    steps.retain(|s| !s.trim().is_empty());
    if steps.is_empty() {
        return Err(PlanError::ParseFailure("no numbered step list found".into()));
    }
    Ok(PlanParse {
        reformulation: reformulation.join(" ").trim().to_string(),
        steps,
    })
}

/// Recognizes a trailing `[LEAF: <name>]` marker. Names must match the
/// roster (case-insensitively); the canonical roster spelling is returned.
pub fn parse_leaf_marker(step: &str, config: &GardenConfig) -> Result<Option<LeafMarker>, PlanError> {
    let Some(caps) = marker().captures(step) else { return Ok(None) };
    let name = caps[1].trim();
    match config.find_submodule(name) {
        Some(sub) => Ok(Some(LeafMarker { submodule: sub.name.clone() })),
        None => Err(PlanError::UnknownSubmodule(name.to_string())),
    }
}

/// The step text without its leaf marker.
pub fn strip_leaf_marker(step: &str) -> &str {
    match marker().find(step) {
        Some(m) => step[..m.start()].trim_end(),
        None => step.trim_end(),
    }
}

/// Finds the submodule named in a roster-assignment reply: an explicit
/// marker wins, otherwise the earliest roster name mentioned.
pub fn parse_assignment(reply: &str, config: &GardenConfig) -> Result<LeafMarker, PlanError> {
    for line in reply.lines() {
        if let Some(m) = parse_leaf_marker(line.trim(), config)? {
            return Ok(m);
        }
    }
    let lower = reply.to_ascii_lowercase();
    config
        .submodule_roster
        .iter()
        .filter_map(|s| {
            let name = s.name.to_ascii_lowercase();
            lower
                .match_indices(&name)
                .find(|(pos, _)| is_word_boundary(&lower, *pos, name.len()))
                .map(|(pos, _)| (pos, s.name.clone()))
        })
        .min()
        .map(|(_, submodule)| LeafMarker { submodule })
        .ok_or_else(|| PlanError::ParseFailure("reply names no known submodule".into()))
}

fn is_word_boundary(text: &str, start: usize, len: usize) -> bool {
    let word = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let before = text[..start].chars().next_back().is_none_or(|c| !word(c));
    let after = text[start + len..].chars().next().is_none_or(|c| !word(c));
    before && after
}

/// Splits a task-generator reply into the named sections of `schema`.
///
/// A section starts at a line holding its name (optionally followed by
/// "prompt", optionally as a markdown heading) and a colon; text after the
/// colon belongs to the section. A single-section schema accepts a reply
/// without headings as the whole section.
pub fn parse_sections(reply: &str, schema: &[&str]) -> Result<BTreeMap<String, String>, PlanError> {
    let heading = |line: &str| -> Option<(usize, String)> {
        let t = line.trim().trim_start_matches('#').trim().trim_start_matches("**");
        let lower = t.to_ascii_lowercase();
        schema.iter().enumerate().find_map(|(i, key)| {
            let rest = lower.strip_prefix(&key.to_ascii_lowercase())?;
            let rest = rest.strip_prefix(" prompt").unwrap_or(rest).trim_start_matches("**");
            let after = rest.strip_prefix(':')?;
            let offset = lower.len() - after.len();
            Some((i, t[offset..].trim().trim_start_matches("**").trim().to_string()))
        })
    };

    let mut sections: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in reply.lines() {
        if let Some((i, inline)) = heading(line) {
            let key = schema[i].to_string();
            let entry = sections.entry(key.clone()).or_default();
            if !inline.is_empty() {
                entry.push(inline);
            }
            current = Some(key);
        } else if let Some(key) = &current {
            sections.get_mut(key).expect("current key exists").push(line.to_string());
        }
    }

    let mut out = BTreeMap::new();
    if sections.is_empty() && schema.len() == 1 {
        let body = strip_fences(reply.trim());
        if !body.is_empty() {
            out.insert(schema[0].to_string(), body);
        }
    } else {
        for (key, lines) in sections {
            let body = lines.join("\n").trim().to_string();
            if !body.is_empty() {
                out.insert(key, body);
            }
        }
    }
    let missing: Vec<&str> = schema.iter().copied().filter(|k| !out.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(PlanError::ParseFailure(format!("missing sections: {}", missing.join(", "))));
    }
    Ok(out)
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .trim_matches('"')
        .trim()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GardenConfig {
        GardenConfig::default()
    }

    #[test]
    fn outline_and_numbered_steps() {
        let p = parse_plan("OUTLINE: pastoral sim\n1. terrain\n2. sheep\n3. behavior").unwrap();
        assert_eq!(p.reformulation, "pastoral sim");
        assert_eq!(p.steps, vec!["terrain", "sheep", "behavior"]);
    }

    #[test]
    fn detail_label_and_continuations() {
        let text = "Sure.\nDETAIL: make the hill\nrolling and green\n\n1) Sculpt hills\n   with noise\n2) Paint grass";
        let p = parse_plan(text).unwrap();
        assert_eq!(p.reformulation, "make the hill rolling and green");
        assert_eq!(p.steps, vec!["Sculpt hills with noise", "Paint grass"]);
    }

    #[test]
    fn bullets_as_fallback() {
        let p = parse_plan("- a\n- b").unwrap();
        assert_eq!(p.steps, vec!["a", "b"]);
        assert_eq!(p.reformulation, "");
    }

    #[test]
    fn no_list_is_a_parse_failure() {
        assert!(matches!(parse_plan("just prose here"), Err(PlanError::ParseFailure(_))));
    }

    #[test]
    fn leaf_markers() {
        let c = cfg();
        assert_eq!(
            parse_leaf_marker("Add fog [LEAF: code_generator]", &c).unwrap(),
            Some(LeafMarker { submodule: "code_generator".into() })
        );
        assert_eq!(parse_leaf_marker("Add fog", &c).unwrap(), None);
        assert_eq!(
            parse_leaf_marker("Add fog [LEAF: animator]", &c),
            Err(PlanError::UnknownSubmodule("animator".into()))
        );
        assert_eq!(
            parse_leaf_marker("Sheep [leaf: MESH_DOWNLOADER]", &c).unwrap().unwrap().submodule,
            "mesh_downloader"
        );
        assert_eq!(strip_leaf_marker("Add fog [LEAF: code_generator]"), "Add fog");
        assert_eq!(strip_leaf_marker("Add fog"), "Add fog");
    }

    #[test]
    fn roster_assignment_reply() {
        let c = cfg();
        assert_eq!(parse_assignment("[LEAF: procedural_mesh]", &c).unwrap().submodule, "procedural_mesh");
        assert_eq!(
            parse_assignment("I would use mesh_downloader, not code_generator.", &c).unwrap().submodule,
            "mesh_downloader"
        );
        assert!(parse_assignment("no idea", &c).is_err());
    }

    #[test]
    fn section_parsing() {
        let reply = "ACTOR:\nWrite a sheep actor.\nIt wanders.\n\nSPAWNER PROMPT: Place three sheep.";
        let parts = parse_sections(reply, &["actor", "spawner"]).unwrap();
        assert_eq!(parts["actor"], "Write a sheep actor.\nIt wanders.");
        assert_eq!(parts["spawner"], "Place three sheep.");

        let md = "## Actor:\nA\n## **Spawner**:\nB";
        let parts = parse_sections(md, &["actor", "spawner"]).unwrap();
        assert_eq!(parts["spawner"], "B");

        let parts = parse_sections("a low-poly sheep", &["description"]).unwrap();
        assert_eq!(parts["description"], "a low-poly sheep");

        assert!(matches!(
            parse_sections("ACTOR: only actor", &["actor", "spawner"]),
            Err(PlanError::ParseFailure(_))
        ));
    }
}

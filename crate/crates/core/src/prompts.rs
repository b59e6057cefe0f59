//! Versioned system-prompt templates.
//!
//! Templates use `{{name}}` placeholders. Bump [`PROMPT_VERSION`] whenever a
//! template's wording changes so recorded runs can be matched to prompts.

pub const PROMPT_VERSION: &str = "1";

pub const BROAD_PLANNER: &str = include_str!("../prompts/broad_planner.txt");
pub const SUB_PLANNER: &str = include_str!("../prompts/sub_planner.txt");
pub const LEAF_ASSIGNER: &str = include_str!("../prompts/leaf_assigner.txt");
pub const TASK_GENERATOR: &str = include_str!("../prompts/task_generator.txt");
pub const CODE_GENERATOR: &str = include_str!("../prompts/code_generator.txt");
pub const PROCEDURAL_MESH: &str = include_str!("../prompts/procedural_mesh.txt");
pub const LAYOUT_GENERATOR: &str = include_str!("../prompts/layout_generator.txt");
pub const COMPILE_EVAL: &str = include_str!("../prompts/compile_eval.txt");
pub const PLACEMENT_EVAL: &str = include_str!("../prompts/placement_eval.txt");
pub const CRASH_EVAL: &str = include_str!("../prompts/crash_eval.txt");
pub const VISUAL_EVAL: &str = include_str!("../prompts/visual_eval.txt");

/// Substitutes `{{key}}` placeholders. Unknown placeholders are left as-is
/// so that a missing binding shows up in captured requests.
pub fn render(template: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in bindings {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_bindings() {
        assert_eq!(render("a {{x}} b {{x}}", &[("x", "1")]), "a 1 b 1");
        assert_eq!(render("{{missing}}", &[]), "{{missing}}");
    }
}

use std::sync::OnceLock;

use regex::Regex;

use super::{CodeBundle, CodegenError, EvaluationReport, LayoutSpec, SourceStage, Verdict};
use crate::engine::SCREENSHOT_COUNT;
use crate::prompts;
use crate::provider::{AgentRole, CompletionRequest, ImageBlob, LanguageModel};

const EXCERPT_CHARS: usize = 2_000;

fn verdict_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*#>_]*verdict[\s*_]*:[\s*_]*(pass|fail)\b").unwrap())
}

/// Reads the first `VERDICT: PASS|FAIL` line; everything after it is the
/// feedback body.
pub fn parse_verdict(text: &str) -> Option<(Verdict, String)> {
    let lines: Vec<&str> = text.lines().collect();
    let (idx, caps) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| verdict_line().captures(l).map(|c| (i, c)))?;
    let verdict = if caps[1].eq_ignore_ascii_case("pass") { Verdict::Pass } else { Verdict::Fail };
    let feedback = lines[idx + 1..].join("\n").trim().to_string();
    Some((verdict, feedback))
}

/// Last `EXCERPT_CHARS` characters of a log, where errors usually are.
pub fn excerpt(log: &str) -> String {
    let count = log.chars().count();
    if count <= EXCERPT_CHARS {
        return log.trim().to_string();
    }
    let tail: String = log.chars().skip(count - EXCERPT_CHARS).collect();
    format!("...{}", tail.trim())
}

fn report_from(reply: &str, stage: SourceStage, raw: &str) -> EvaluationReport {
    match parse_verdict(reply) {
        Some((Verdict::Fail, feedback)) if feedback.is_empty() => EvaluationReport::fail(
            stage,
            format!("The evaluator gave no details. Raw output:\n{}", excerpt(raw)),
        ),
        Some((verdict, feedback)) => EvaluationReport { verdict, feedback, source_stage: stage, edited_by_user: false },
        None => EvaluationReport::fail(
            stage,
            format!("The evaluator reply could not be parsed. Raw output:\n{}", excerpt(raw)),
        ),
    }
}

fn context_block(bundle: &CodeBundle, layout: Option<&LayoutSpec>, task_prompt: &str) -> String {
    let mut out = format!("Task:\n{task_prompt}\n\nCode:\n{}", bundle.to_prompt_text());
    if let Some(layout) = layout {
        out.push_str(&format!("\n\nLayout:\n{}", layout.to_canonical_json()));
    }
    out
}

pub fn eval_compile_log(
    model: &dyn LanguageModel,
    log: &str,
    bundle: &CodeBundle,
    task_prompt: &str,
) -> Result<EvaluationReport, CodegenError> {
    let user = format!("Build log:\n{}\n\n{}", excerpt(log), context_block(bundle, None, task_prompt));
    let request = CompletionRequest::new(AgentRole::CompileEvaluator, prompts::COMPILE_EVAL, user);
    let reply = model.complete(&request)?.text;
    Ok(report_from(&reply, SourceStage::Compile, log))
}

pub fn eval_placement(
    model: &dyn LanguageModel,
    log_excerpt: &str,
    bundle: &CodeBundle,
    layout: &LayoutSpec,
    task_prompt: &str,
) -> Result<EvaluationReport, CodegenError> {
    let user = format!(
        "Initialization log section:\n{}\n\n{}",
        excerpt(log_excerpt),
        context_block(bundle, Some(layout), task_prompt)
    );
    let request = CompletionRequest::new(AgentRole::PlacementEvaluator, prompts::PLACEMENT_EVAL, user);
    let reply = model.complete(&request)?.text;
    let mut report = report_from(&reply, SourceStage::Placement, log_excerpt);
    // Placement errors never pass, whatever the evaluator says.
    report.verdict = Verdict::Fail;
    if report.feedback.is_empty() {
        report.feedback = format!("Actor placement failed:\n{}", excerpt(log_excerpt));
    }
    Ok(report)
}

pub fn eval_crash_log(
    model: &dyn LanguageModel,
    crash_log: &str,
    bundle: &CodeBundle,
    layout: &LayoutSpec,
    task_prompt: &str,
) -> Result<EvaluationReport, CodegenError> {
    if crash_log.trim().is_empty() {
        return Ok(EvaluationReport::fail(SourceStage::Crash, "The engine crashed; no diagnostic available."));
    }
    let user = format!(
        "Crash log:\n{}\n\n{}",
        excerpt(crash_log),
        context_block(bundle, Some(layout), task_prompt)
    );
    let request = CompletionRequest::new(AgentRole::CrashEvaluator, prompts::CRASH_EVAL, user);
    let reply = model.complete(&request)?.text;
    let mut report = report_from(&reply, SourceStage::Crash, crash_log);
    report.verdict = Verdict::Fail;
    if report.feedback.is_empty() {
        report.feedback = format!("The engine crashed:\n{}", excerpt(crash_log));
    }
    Ok(report)
}

pub fn eval_visual(
    model: &dyn LanguageModel,
    screenshots: Vec<ImageBlob>,
    runtime_log: &str,
    bundle: &CodeBundle,
    layout: &LayoutSpec,
    task_prompt: &str,
) -> Result<EvaluationReport, CodegenError> {
    if screenshots.len() != SCREENSHOT_COUNT {
        return Err(CodegenError::PreconditionViolation(format!(
            "visual evaluation needs {SCREENSHOT_COUNT} screenshots, got {}",
            screenshots.len()
        )));
    }
    let system = prompts::render(prompts::VISUAL_EVAL, &[("screenshot_count", &SCREENSHOT_COUNT.to_string())]);
    let user = format!(
        "Runtime log:\n{}\n\n{}",
        excerpt(runtime_log),
        context_block(bundle, Some(layout), task_prompt)
    );
    let request = CompletionRequest::new(AgentRole::VisualEvaluator, system, user).with_images(screenshots);
    let reply = model.complete_vision(&request)?.text;
    Ok(report_from(&reply, SourceStage::Visual, &reply))
}

//! Operator commands against a single garden workspace.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use gardener_core::assets::build_index;
use gardener_core::engine::Workspace;
use gardener_core::garden::{Garden, Mode, NodeId, NodeKind};
use gardener_core::orchestrator::{Orchestrator, StepOutcome};

use crate::config::Settings;

const LINE_CHARS: usize = 72;

pub struct Context {
    pub workspace: PathBuf,
    pub settings: Settings,
}

impl Context {
    /// Reads `--config`, falling back to `<workspace>/gardener.toml`.
    pub fn load(workspace: PathBuf, config: Option<&Path>) -> Result<Self> {
        let default = workspace.join("gardener.toml");
        let settings = match config {
            Some(path) => Settings::load(path)?,
            None if default.is_file() => Settings::load(&default)?,
            None => Settings::default(),
        };
        Ok(Self { workspace, settings })
    }

    fn ws(&self) -> Workspace {
        Workspace::new(&self.workspace)
    }

    fn garden_id(&self) -> String {
        let path = fs::canonicalize(&self.workspace).unwrap_or_else(|_| self.workspace.clone());
        path.file_name().and_then(|n| n.to_str()).unwrap_or("garden").to_string()
    }

    fn exists(&self) -> bool {
        self.ws().events_file().is_file()
    }

    pub fn open(&self) -> Result<Orchestrator> {
        if !self.exists() {
            bail!("no garden in {}; run `gardener init` first", self.workspace.display());
        }
        let ws = self.ws();
        let services = self.settings.services(&ws)?;
        Ok(Orchestrator::open(ws, services)?)
    }

    fn create(&self) -> Result<Orchestrator> {
        let ws = self.ws();
        let services = self.settings.services(&ws)?;
        Ok(Orchestrator::create(ws, &self.garden_id(), self.settings.garden_config(), services)?)
    }
}

pub fn init(ctx: &Context) -> Result<String> {
    if ctx.exists() {
        bail!("{} already holds a garden", ctx.workspace.display());
    }
    ctx.create()?;
    Ok(format!("initialized garden {} in {}", ctx.garden_id(), ctx.workspace.display()))
}

pub fn seed(ctx: &Context, text: &str) -> Result<String> {
    let mut orch = if ctx.exists() { ctx.open()? } else { ctx.create()? };
    let id = orch.seed(text)?;
    Ok(format!("seeded {id}"))
}

fn describe(outcome: &StepOutcome) -> String {
    match outcome {
        StepOutcome::Worked(item) => format!("worked {item:?}"),
        StepOutcome::Idle => "idle: nothing left to do".into(),
        StepOutcome::Paused => "paused".into(),
    }
}

/// Performs up to `units` work units in Step mode.
pub fn step(ctx: &Context, units: usize) -> Result<String> {
    let mut orch = ctx.open()?;
    if orch.mode() != Mode::Step {
        orch.set_mode(Mode::Step)?;
    }
    let mut out = String::new();
    for _ in 0..units {
        let outcome = orch.step()?;
        writeln!(out, "{}", describe(&outcome))?;
        if !matches!(outcome, StepOutcome::Worked(_)) {
            break;
        }
    }
    Ok(out.trim_end().to_string())
}

/// Switches to Play and works until the frontier is empty.
pub fn play(ctx: &Context, max_units: usize, mut progress: impl FnMut(&str)) -> Result<usize> {
    let mut orch = ctx.open()?;
    orch.set_mode(Mode::Play)?;
    let mut done = 0;
    while done < max_units {
        match orch.step()? {
            outcome @ StepOutcome::Worked(_) => {
                done += 1;
                progress(&describe(&outcome));
            }
            _ => break,
        }
    }
    Ok(done)
}

pub fn pause(ctx: &Context) -> Result<String> {
    ctx.open()?.set_mode(Mode::Paused)?;
    Ok("paused".into())
}

fn one_line(text: &str) -> String {
    let line = text.lines().next().unwrap_or("").trim();
    match line.char_indices().nth(LINE_CHARS) {
        Some((cut, _)) => format!("{}…", &line[..cut]),
        None => line.to_string(),
    }
}

fn render_tree(garden: &Garden, id: NodeId, depth: usize, out: &mut String) {
    let node = garden.get(id).expect("child ids are valid");
    let leaf = match (&node.kind, node.is_leaf) {
        (NodeKind::PlanStep, true) => format!(" <{}>", node.assigned_submodule.as_deref().unwrap_or("?")),
        _ => String::new(),
    };
    let _ = writeln!(
        out,
        "{}{} {:?} [{:?}]{leaf} {}",
        "  ".repeat(depth),
        node.id,
        node.kind,
        node.status,
        one_line(&node.text)
    );
    for child in garden.children(id) {
        render_tree(garden, *child, depth + 1, out);
    }
}

/// Tree summary followed by the leaves in execution order.
pub fn status(ctx: &Context) -> Result<String> {
    let orch = ctx.open()?;
    let garden = orch.garden();
    let mut out = String::new();
    writeln!(out, "garden {} ({} nodes, mode {:?})", orch.state().garden_id(), garden.len(), garden.mode())?;
    match garden.seed() {
        Some(seed) => render_tree(garden, seed, 0, &mut out),
        None => writeln!(out, "(not seeded)")?,
    }
    writeln!(out, "leaves:")?;
    for (i, leaf) in garden.ordered_leaves().into_iter().enumerate() {
        let node = garden.get(leaf).expect("leaf exists");
        let task = match garden.task_of(leaf).and_then(|t| garden.get(t)) {
            Some(t) => format!("task {} {:?}", t.id, t.status),
            None => "no task".into(),
        };
        writeln!(
            out,
            "{:>3}. {} <{}> {task} {}",
            i + 1,
            leaf,
            node.assigned_submodule.as_deref().unwrap_or("?"),
            one_line(&node.text)
        )?;
    }
    let frontier = garden.compute_frontier();
    match frontier.first() {
        Some(next) => writeln!(out, "next: {next:?} ({} pending)", frontier.len())?,
        None => writeln!(out, "next: nothing, the garden is fully grown")?,
    }
    Ok(out.trim_end().to_string())
}

pub fn export(ctx: &Context, path: &Path) -> Result<String> {
    let orch = ctx.open()?;
    let document = orch.state().document().context("garden has no document")?;
    fs::write(path, document).with_context(|| format!("writing {}", path.display()))?;
    Ok(format!("exported {} nodes to {}", orch.garden().len(), path.display()))
}

pub fn index_build(ctx: &Context, manifest: &Path, out: Option<&Path>) -> Result<String> {
    let embedder = ctx.settings.embedder()?;
    let index = build_index(manifest, embedder.as_ref()).with_context(|| format!("indexing {}", manifest.display()))?;
    let target = match out {
        Some(p) => p.to_path_buf(),
        None => manifest.with_file_name("index.json"),
    };
    index.save(&target)?;
    Ok(format!("indexed {} assets into {}", index.len(), target.display()))
}

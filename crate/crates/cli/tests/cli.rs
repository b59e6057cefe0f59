mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use gardener_core::garden::Mode;
use gardener_core::persistence::{load_garden_file, EventLog, EventPayload};

fn gardener(workspace: &Path, settings: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gardener"))
        .arg("--workspace")
        .arg(workspace)
        .arg("--config")
        .arg(settings)
        .args(args)
        .output()
        .unwrap()
}

fn ok(output: Output) -> String {
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout).unwrap()
}

fn work_units(workspace: &Path) -> usize {
    let log = EventLog::open(&workspace.join("events.log")).unwrap();
    log.events().iter().filter(|e| matches!(e.payload, EventPayload::WorkStarted { .. })).count()
}

#[test]
fn seed_creates_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sheep_settings(dir.path());
    let garden = dir.path().join("sheep");
    let out = ok(gardener(&garden, &settings, &["seed", SHEEP_SEED]));
    assert!(out.contains("seeded n1"), "{out}");
    let (id, g, _) = load_garden_file(&garden.join("garden.json")).unwrap();
    assert_eq!(id, "sheep");
    assert_eq!(g.len(), 1);
}

#[test]
fn step_adds_exactly_the_requested_units() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sheep_settings(dir.path());
    let garden = dir.path().join("sheep");
    ok(gardener(&garden, &settings, &["init"]));
    ok(gardener(&garden, &settings, &["seed", SHEEP_SEED]));
    assert_eq!(work_units(&garden), 0);
    let out = ok(gardener(&garden, &settings, &["step", "3"]));
    assert_eq!(out.lines().count(), 3);
    assert_eq!(work_units(&garden), 3);
}

#[test]
fn play_then_status_lists_leaves_in_execution_order() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sheep_settings(dir.path());
    let garden = dir.path().join("sheep");
    ok(gardener(&garden, &settings, &["seed", SHEEP_SEED]));
    let out = ok(gardener(&garden, &settings, &["play"]));
    assert!(out.trim_end().ends_with("16 units"), "{out}");

    let (_, g, _) = load_garden_file(&garden.join("garden.json")).unwrap();
    assert_eq!(g.len(), 25);
    let status = ok(gardener(&garden, &settings, &["status"]));
    let listed: Vec<String> = status
        .lines()
        .skip_while(|l| *l != "leaves:")
        .skip(1)
        .take_while(|l| !l.starts_with("next:"))
        .map(|l| l.split_whitespace().nth(1).unwrap().to_string())
        .collect();
    let expected: Vec<String> = g.ordered_leaves().iter().map(|id| id.to_string()).collect();
    assert_eq!(listed, expected);
    assert!(status.contains("fully grown"));

    let export = dir.path().join("export.json");
    ok(gardener(&garden, &settings, &["export", export.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(export).unwrap(), fs::read_to_string(garden.join("garden.json")).unwrap());

    ok(gardener(&garden, &settings, &["pause"]));
    let (_, g, _) = load_garden_file(&garden.join("garden.json")).unwrap();
    assert_eq!(g.mode(), Mode::Paused);
}

#[test]
fn index_build_writes_a_loadable_index() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sheep_settings(dir.path());
    let out_path = dir.path().join("built.json");
    let manifest = sheep_dir().join("library/manifest.tsv");
    let out = ok(gardener(
        dir.path(),
        &settings,
        &["index", "build", manifest.to_str().unwrap(), "--out", out_path.to_str().unwrap()],
    ));
    assert!(out.contains("indexed 4 assets"), "{out}");
    let built = gardener_core::assets::AssetIndex::load(&out_path).unwrap();
    let reference = gardener_core::assets::AssetIndex::load(&dir.path().join("index.json")).unwrap();
    assert_eq!(built.entries(), reference.entries());
}

#[test]
fn failures_exit_non_zero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sheep_settings(dir.path());
    let garden = dir.path().join("empty");
    let output = gardener(&garden, &settings, &["step"]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("gardener init"));

    ok(gardener(&garden, &settings, &["init"]));
    let again = gardener(&garden, &settings, &["init"]);
    assert!(!again.status.success());
    ok(gardener(&garden, &settings, &["seed", "one"]));
    assert!(!gardener(&garden, &settings, &["seed", "two"]).status.success());
}

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub fn sheep_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/sheep")
}

/// Writes a settings file that runs the sheep fixture: replay script, mock
/// engine scenario, the thumbnail library and fixture generators.
pub fn sheep_settings(dir: &Path) -> PathBuf {
    let sheep = sheep_dir();
    let index = dir.join("index.json");
    let embedder = gardener_core::assets::HashingEmbedder::new(64);
    gardener_core::assets::build_index(&sheep.join("library/manifest.tsv"), &embedder)
        .unwrap()
        .save(&index)
        .unwrap();
    fs::write(dir.join("image.png"), b"\x89PNG\r\n\x1a\ngrass").unwrap();
    fs::write(dir.join("mesh.glb"), b"glTF\x02\x00\x00\x00grass").unwrap();
    let path = dir.join("settings.toml");
    let text = format!(
        r#"
[garden]
max_depth = 3
max_branching = 3
max_code_attempts = 3

[provider]
kind = "replay"
script_dir = "{script}"

[engine]
kind = "mock_scenario"
scenario = "{scenario}"

[assets]
index = "index.json"
library = "{library}"
fixture_image = "image.png"
fixture_mesh = "mesh.glb"
embedder = {{ kind = "hashing", dim = 64 }}
"#,
        script = sheep.join("script").display(),
        scenario = sheep.join("engine.json").display(),
        library = sheep.join("library").display(),
    );
    fs::write(&path, text).unwrap();
    path
}

pub const SHEEP_SEED: &str = "a sheep grazing on a grassy hillside";

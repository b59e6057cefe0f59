//! TOML settings: garden bounds plus the provider, engine and asset services
//! a garden runs against.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use gardener_core::assets::{
    AssetIndex, EmbeddingProvider, FixtureImageToMesh, FixtureTextToImage, HashingEmbedder, HttpEmbedder,
    LocalFileSource,
};
use gardener_core::engine::{EngineAdapter, MockEngine, MockScenario, ProcessEngine, ProcessEngineConfig, Workspace};
use gardener_core::garden::{GardenConfig, SubmoduleDescriptor};
use gardener_core::orchestrator::Services;
use gardener_core::provider::{LanguageModel, LiveProvider, LiveProviderConfig, ReplayProvider};
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub garden: GardenSettings,
    pub provider: ProviderSettings,
    pub engine: EngineSettings,
    pub assets: AssetSettings,
    pub planner: PlannerSettings,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GardenSettings {
    pub max_depth: Option<u32>,
    pub max_branching: Option<u32>,
    pub max_code_attempts: Option<u32>,
    pub submodules: Option<Vec<SubmoduleDescriptor>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSettings {
    /// `LLM_*` environment variables when set, otherwise nothing.
    #[default]
    Env,
    Live {
        api_base: String,
        model: String,
        vision_model: Option<String>,
        /// Name of the environment variable holding the key.
        api_key_env: Option<String>,
        max_retries: Option<u32>,
        timeout_secs: Option<u64>,
    },
    Replay {
        script_dir: PathBuf,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineSettings {
    #[default]
    Mock,
    MockScenario {
        scenario: PathBuf,
    },
    Process {
        project_dir: PathBuf,
        build_command: Vec<String>,
        run_command: Vec<String>,
        #[serde(default)]
        import_command: Vec<String>,
        #[serde(default)]
        session_command: Vec<String>,
        build_timeout_secs: Option<u64>,
        run_timeout_secs: Option<u64>,
        #[serde(default = "yes")]
        isolates_processes: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetSettings {
    /// Index file written by `index build`.
    pub index: Option<PathBuf>,
    /// Base directory for index `source_uri`s.
    pub library: Option<PathBuf>,
    pub embedder: EmbedderSettings,
    /// Fixed image/mesh files standing in for the generative services.
    pub fixture_image: Option<PathBuf>,
    pub fixture_mesh: Option<PathBuf>,
}

impl Default for AssetSettings {
    fn default() -> Self {
        Self {
            index: None,
            library: None,
            embedder: EmbedderSettings::Hashing { dim: 64 },
            fixture_image: None,
            fixture_mesh: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSettings {
    Hashing { dim: usize },
    Http { api_base: String, model: String, dim: usize, api_key_env: Option<String> },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSettings {
    pub context_budget: Option<usize>,
    pub test_disclaimer: Option<String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut settings: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        if let Some(base) = path.parent() {
            settings.rebase(base);
        }
        Ok(settings)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.provider {
            ProviderSettings::Replay { script_dir } => fix(script_dir),
            ProviderSettings::Env | ProviderSettings::Live { .. } => {}
        }
        match &mut self.engine {
            EngineSettings::MockScenario { scenario } => fix(scenario),
            EngineSettings::Process { project_dir, .. } => fix(project_dir),
            EngineSettings::Mock => {}
        }
        let assets = &mut self.assets;
        for p in [&mut assets.index, &mut assets.library, &mut assets.fixture_image, &mut assets.fixture_mesh]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn garden_config(&self) -> GardenConfig {
        let mut config = GardenConfig::default();
        let g = &self.garden;
        if let Some(v) = g.max_depth {
            config.max_depth = v;
        }
        if let Some(v) = g.max_branching {
            config.max_branching = v;
        }
        if let Some(v) = g.max_code_attempts {
            config.max_code_attempts = v;
        }
        if let Some(roster) = &g.submodules {
            config.submodule_roster = roster.clone();
        }
        config
    }

    fn model(&self) -> Result<Arc<dyn LanguageModel>> {
        Ok(match &self.provider {
            ProviderSettings::Env => match LiveProviderConfig::from_env() {
                Ok(config) => Arc::new(LiveProvider::new(config)),
                // Without a model every planning unit fails and is marked so.
                Err(_) => Arc::new(ReplayProvider::new()),
            },
            ProviderSettings::Live { api_base, model, vision_model, api_key_env, max_retries, timeout_secs } => {
                let mut config = LiveProviderConfig::new(api_base, model);
                config.vision_model = vision_model.clone();
                if let Some(var) = api_key_env {
                    config.api_key = Some(std::env::var(var).with_context(|| format!("{var} is not set"))?);
                }
                if let Some(n) = max_retries {
                    config.max_retries = *n;
                }
                if let Some(secs) = timeout_secs {
                    config.timeout = Duration::from_secs(*secs);
                }
                Arc::new(LiveProvider::new(config))
            }
            ProviderSettings::Replay { script_dir } => Arc::new(
                ReplayProvider::from_dir(script_dir).with_context(|| format!("loading {}", script_dir.display()))?,
            ),
        })
    }

    fn engine(&self, workspace: &Workspace) -> Result<Arc<dyn EngineAdapter>> {
        Ok(match &self.engine {
            EngineSettings::Mock => Arc::new(MockEngine::new(MockScenario::new()).with_workspace(workspace.clone())),
            EngineSettings::MockScenario { scenario } => {
                let text = fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
                let scenario = MockScenario::from_json(&text).context("parsing mock scenario")?;
                Arc::new(MockEngine::new(scenario).with_workspace(workspace.clone()))
            }
            EngineSettings::Process {
                project_dir,
                build_command,
                run_command,
                import_command,
                session_command,
                build_timeout_secs,
                run_timeout_secs,
                isolates_processes,
            } => {
                if build_command.is_empty() || run_command.is_empty() {
                    bail!("process engine needs build_command and run_command");
                }
                let mut config = ProcessEngineConfig::new(project_dir, workspace.clone());
                config.build_command = build_command.clone();
                config.run_command = run_command.clone();
                config.import_command = import_command.clone();
                config.session_command = session_command.clone();
                if let Some(s) = build_timeout_secs {
                    config.build_timeout = Duration::from_secs(*s);
                }
                if let Some(s) = run_timeout_secs {
                    config.run_timeout = Duration::from_secs(*s);
                }
                config.isolates_processes = *isolates_processes;
                Arc::new(ProcessEngine::new(config))
            }
        })
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match &self.assets.embedder {
            EmbedderSettings::Hashing { dim } => Arc::new(HashingEmbedder::new(*dim)),
            EmbedderSettings::Http { api_base, model, dim, api_key_env } => {
                let key = match api_key_env {
                    Some(var) => Some(std::env::var(var).with_context(|| format!("{var} is not set"))?),
                    None => None,
                };
                Arc::new(HttpEmbedder::new(api_base, key, model, *dim))
            }
        })
    }

    /// Everything a garden rooted at `workspace` needs to run.
    pub fn services(&self, workspace: &Workspace) -> Result<Services> {
        let mut services = Services::new(self.model()?, self.engine(workspace)?);
        services.embedder = self.embedder()?;
        let assets = &self.assets;
        if let Some(index) = &assets.index {
            let index = AssetIndex::load(index).with_context(|| format!("loading {}", index.display()))?;
            services.asset_index = Some(Arc::new(index));
        }
        if let Some(library) = &assets.library {
            services.asset_source = Arc::new(LocalFileSource::new(library));
        }
        if let Some(image) = &assets.fixture_image {
            let bytes = fs::read(image).with_context(|| format!("reading {}", image.display()))?;
            services.text_to_image = Arc::new(FixtureTextToImage::new(bytes));
        }
        if let Some(mesh) = &assets.fixture_mesh {
            let bytes = fs::read(mesh).with_context(|| format!("reading {}", mesh.display()))?;
            services.image_to_mesh = Arc::new(FixtureImageToMesh::new(bytes));
        }
        if let Some(budget) = self.planner.context_budget {
            services.planner.context_budget = budget;
        }
        services.planner.test_disclaimer = self.planner.test_disclaimer.clone();
        Ok(services)
    }
}

//! Declarative run configuration. One TOML document describes a whole
//! pipeline run; the environment contributes only the API key named by
//! `auth_env_var`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::RunError;
use crate::expansion::ExpansionConfig;
use crate::gateway::{BackendConfig, BackendKind, MockScript, Stage};
use crate::refinement::RefFixMode;

fn default_target() -> u64 {
    25_000
}

fn default_batch_size() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_stall_window() -> u64 {
    500
}

fn default_max_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub seeds: PathBuf,
    #[serde(default)]
    pub statutes: Option<PathBuf>,
    /// Template directory; the compiled-in assets are used when absent.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefFixModeChoice {
    /// Local when a statute index is configured, LLM otherwise.
    #[default]
    Auto,
    Local,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementConfig {
    #[serde(default)]
    pub reference_fix_mode: RefFixModeChoice,
    #[serde(default = "default_accept_values")]
    pub accept_values: Vec<String>,
}

fn default_accept_values() -> Vec<String> {
    vec!["正确".to_string()]
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            reference_fix_mode: RefFixModeChoice::default(),
            accept_values: default_accept_values(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Temperatures {
    #[serde(default)]
    pub sampling: f64,
    #[serde(default = "default_writer_temperature")]
    pub writer: f64,
    #[serde(default)]
    pub fixer: f64,
    #[serde(default)]
    pub verifier: f64,
}

fn default_writer_temperature() -> f64 {
    0.8
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            sampling: 0.0,
            writer: default_writer_temperature(),
            fixer: 0.0,
            verifier: 0.0,
        }
    }
}

impl Temperatures {
    pub fn for_stage(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Sampling => self.sampling,
            Stage::Writer => self.writer,
            Stage::RefFixer | Stage::ReasonFixer => self.fixer,
            Stage::Verifier => self.verifier,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_target")]
    pub target_count: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub dedup: bool,
    #[serde(default = "default_stall_window")]
    pub stall_window: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts_per_draft: u32,
    #[serde(default = "default_true")]
    pub cache_domain_choice: bool,
    pub paths: PathsConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Per-stage backend overrides; stages not listed use `backend`.
    #[serde(default)]
    pub stage_backends: BTreeMap<Stage, BackendConfig>,
    /// Fault-injection script for mock backends. `seed` falls back to the
    /// run seed when zero.
    #[serde(default)]
    pub mock: Option<MockScript>,
    #[serde(default)]
    pub temperatures: Temperatures,
    #[serde(default)]
    pub refinement: RefinementConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    /// Test hook: stop without finalizing once this many records are
    /// accepted, leaving the run directory as a crash would.
    #[serde(default)]
    pub abort_after_accepted: Option<u64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            RunError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: PipelineConfig = toml::from_str(&raw)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        // Relative paths resolve against the config file's directory.
        if let Some(base) = path.parent() {
            config.paths.corpus = resolve(base, &config.paths.corpus);
            config.paths.seeds = resolve(base, &config.paths.seeds);
            config.paths.statutes = config.paths.statutes.map(|p| resolve(base, &p));
            config.paths.prompts = config.paths.prompts.map(|p| resolve(base, &p));
            config.paths.output_dir = resolve(base, &config.paths.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.target_count < 1 {
            return Err(RunError::Config("target_count must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(RunError::Config("batch_size must be at least 1".into()));
        }
        self.backend
            .validate()
            .map_err(|e| RunError::Config(format!("backend: {e}")))?;
        for (stage, backend) in &self.stage_backends {
            backend
                .validate()
                .map_err(|e| RunError::Config(format!("backend for {stage}: {e}")))?;
        }
        if let Some(script) = &self.mock {
            script
                .validate()
                .map_err(|e| RunError::Config(format!("mock: {e}")))?;
        }
        self.expansion
            .validate()
            .map_err(|e| RunError::Config(format!("expansion: {e}")))?;
        if self.refinement.accept_values.is_empty() {
            return Err(RunError::Config(
                "refinement.accept_values must not be empty".into(),
            ));
        }
        Ok(())
    }

    /// The effective mock script: configured values with the run seed as the
    /// fallback when the script seed is unset.
    pub fn mock_script(&self) -> MockScript {
        let mut script = self.mock.clone().unwrap_or_default();
        if script.seed == 0 {
            script.seed = self.seed;
        }
        script
    }

    pub fn backend_for(&self, stage: Stage) -> &BackendConfig {
        self.stage_backends.get(&stage).unwrap_or(&self.backend)
    }

    pub fn ref_fix_mode(&self) -> RefFixMode {
        match self.refinement.reference_fix_mode {
            RefFixModeChoice::Local => RefFixMode::Local,
            RefFixModeChoice::Llm => RefFixMode::Llm,
            RefFixModeChoice::Auto => {
                if self.paths.statutes.is_some() {
                    RefFixMode::Local
                } else {
                    RefFixMode::Llm
                }
            }
        }
    }

    /// All backends forced to one kind, for the `--backend` CLI flag.
    pub fn override_backend_kind(&mut self, kind: BackendKind) {
        self.backend.kind = kind;
        for backend in self.stage_backends.values_mut() {
            backend.kind = kind;
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::corpus::{derive_tasd, DatasetSpec, Task, Taxonomy};
use crate::gateway::{BackendSpec, DEFAULT_MAX_TOKENS, DEFAULT_STOP, DEFAULT_TEMPERATURE};
use crate::prompt::{PromptTemplate, STANDARD_SHOT_COUNTS};
use crate::validator::DEFAULT_MAX_ATTEMPTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Directory holding `train.txt`, `dev.txt` and `test.txt`.
    pub dir: PathBuf,
    /// One category per line.
    pub taxonomy: PathBuf,
    /// Tuple arity of the files; defaults to the run task. ASQP files can
    /// feed a TASD run (opinion terms are dropped).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Task>,
    #[serde(default)]
    pub domain: String,
}

/// One experiment grid: every shot count × generation seed × test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub task: Task,
    #[serde(default = "default_shot_counts")]
    pub shot_counts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sampling_seed: u64,
    #[serde(default = "default_true")]
    pub self_consistency: bool,
    pub backend: BackendSpec,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_stop")]
    pub stop_sequence: String,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    pub output_dir: PathBuf,
    /// Template file; the built-in template for the task when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub lowercase_shots: bool,
    #[serde(default = "default_true")]
    pub allow_implicit_terms: bool,
    /// Evaluate only the first `n` test examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    /// Permit shot counts outside {0, 10, 20, 30, 40, 50}.
    #[serde(default)]
    pub allow_any_shot_count: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_shot_counts() -> Vec<usize> {
    STANDARD_SHOT_COUNTS.to_vec()
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_true() -> bool {
    true
}
fn default_model() -> String {
    "gemma3:27b".into()
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_stop() -> String {
    DEFAULT_STOP.into()
}
fn default_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}
fn default_workers() -> usize {
    4
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn read(path: &Path) -> Result<Vec<u8>, RunError> {
    fs::read(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Inputs resolved from a config: dataset, template and the config hash.
pub struct LoadedInputs {
    pub dataset: DatasetSpec,
    pub template: PromptTemplate,
    pub config_hash: String,
}

impl RunConfig {
    /// Parses a TOML config. Relative paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.dir);
        resolve(base, &mut self.dataset.taxonomy);
        resolve(base, &mut self.output_dir);
        if let Some(t) = &mut self.template {
            resolve(base, t);
        }
        if let BackendSpec::Scripted { script } = &mut self.backend {
            resolve(base, script);
        }
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one generation seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad(format!("generation seeds must be distinct: {:?}", self.seeds));
        }
        if self.shot_counts.is_empty() {
            return bad("at least one shot count is required".into());
        }
        if self.shot_counts.iter().collect::<BTreeSet<_>>().len() != self.shot_counts.len() {
            return bad(format!("shot counts must be distinct: {:?}", self.shot_counts));
        }
        if !self.allow_any_shot_count {
            if let Some(k) = self.shot_counts.iter().find(|k| !STANDARD_SHOT_COUNTS.contains(k)) {
                return bad(format!(
                    "shot count {k} is not one of {STANDARD_SHOT_COUNTS:?} (set allow_any_shot_count to override)"
                ));
            }
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1".into());
        }
        if !(self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be > 0".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.test_limit == Some(0) {
            return bad("test_limit must be >= 1".into());
        }
        if let (Some(Task::Tasd), Task::Asqp) = (self.dataset.format, self.task) {
            return bad("an ASQP run cannot be built from TASD files".into());
        }
        if let BackendSpec::Perturb { rate, .. } = self.backend {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("perturb rate must be in [0, 1], got {rate}"));
            }
        }
        Ok(())
    }

    pub fn file_task(&self) -> Task {
        self.dataset.format.unwrap_or(self.task)
    }

    /// Loads dataset and template, checks dataset-dependent constraints and
    /// computes the config hash.
    pub fn load_inputs(&self) -> Result<LoadedInputs, RunError> {
        self.validate()?;
        let taxonomy = Taxonomy::load(&self.dataset.taxonomy)?;
        let mut dataset = DatasetSpec::load_dir(
            &self.dataset.name,
            &self.dataset.domain,
            &self.dataset.dir,
            self.file_task(),
            taxonomy,
        )?;
        if dataset.task != self.task {
            dataset = derive_tasd(&dataset)?;
        }
        if let Some(limit) = self.test_limit {
            dataset.test.truncate(limit);
        }
        if dataset.test.is_empty() {
            return Err(RunError::Config("test split is empty".into()));
        }
        if let Some(k) = self.shot_counts.iter().find(|&&k| k > dataset.train.len()) {
            return Err(RunError::Config(format!(
                "shot count {k} exceeds the {} training examples",
                dataset.train.len()
            )));
        }
        let template = match &self.template {
            Some(path) => PromptTemplate::load(path).map_err(|e| RunError::Config(e.to_string()))?,
            None => PromptTemplate::default_for(self.task),
        };
        if template.task != self.task {
            return Err(RunError::Config(format!(
                "template {} is for {}, run task is {}",
                template.version, template.task, self.task
            )));
        }
        let config_hash = self.hash_with(&template.source)?;
        Ok(LoadedInputs {
            dataset,
            template,
            config_hash,
        })
    }

    /// SHA-256 over every output-affecting setting, the template text and
    /// the dataset file contents. Paths, `workers` and secrets are excluded.
    fn hash_with(&self, template_source: &str) -> Result<String, RunError> {
        let mut view = self.clone();
        view.output_dir = PathBuf::new();
        view.workers = 0;
        view.dataset.dir = PathBuf::new();
        view.dataset.taxonomy = PathBuf::new();
        view.template = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&serde_json::to_value(&view).map_err(|e| RunError::Config(e.to_string()))?)
            .map_err(|e| RunError::Config(e.to_string()))?);
        h.update(b"\0template\0");
        h.update(template_source.as_bytes());
        h.update(b"\0taxonomy\0");
        h.update(read(&self.dataset.taxonomy)?);
        for file in ["train.txt", "dev.txt", "test.txt"] {
            h.update(b"\0");
            h.update(file.as_bytes());
            h.update(b"\0");
            h.update(read(&self.dataset.dir.join(file))?);
        }
        if let BackendSpec::Scripted { script } = &self.backend {
            h.update(b"\0script\0");
            h.update(read(script)?);
        }
        Ok(hex::encode(h.finalize()))
    }
}

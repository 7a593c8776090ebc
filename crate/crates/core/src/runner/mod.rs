//! Experiment grid execution with an append-only record log.
//!
//! Layout of an output directory:
//! * `manifest.json`: config hash, template version and the resolved config;
//! * `records.jsonl`: one [`PredictionRecord`] per (shots, seed, example);
//! * `reports.json`, `reports.csv`: written once every cell is complete.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::corpus::{CorpusError, DatasetSpec, Example};
use crate::exec::Execution;
use crate::gateway::{make_backend, Backend, BackendSpec, GatewayError};
use crate::metrics::MetricsError;
use crate::prompt::{sample_shots, shuffle_shots, PromptBuilder, PromptError};
use crate::validator::{acquire_label, AcquireContext, GenerationParams, ValidationOptions};

mod config;
pub mod report;
pub mod store;

pub use config::{DatasetConfig, LoadedInputs, RunConfig};
pub use report::{build_report, ConditionResult, ExperimentReport, SeedReport};
pub use store::{Manifest, PredictionRecord, RecordKey, MANIFEST_FILE, RECORDS_FILE};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}:{line}: corrupt record: {message}", path.display())]
    CorruptRecords { path: PathBuf, line: usize, message: String },
    #[error("config hash mismatch: output was produced by {stored}, current inputs hash to {current}")]
    HashMismatch { stored: String, current: String },
    #[error("{} already holds a run; use resume", .0.display())]
    AlreadyExists(PathBuf),
    #[error("{missing} of {expected} predictions are missing")]
    Incomplete { missing: usize, expected: usize },
}

impl RunError {
    /// Process exit code: 2 for configuration and input problems, 3 for
    /// backend transport failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_)
            | RunError::Corpus(_)
            | RunError::Prompt(_)
            | RunError::HashMismatch { .. }
            | RunError::AlreadyExists(_) => 2,
            RunError::Gateway(g) => match g {
                GatewayError::Transport { .. }
                | GatewayError::Timeout { .. }
                | GatewayError::Auth { .. }
                | GatewayError::Protocol(_) => 3,
                _ => 2,
            },
            _ => 1,
        }
    }
}

/// Exit code for a run that completed but used the empty-label fallback.
pub const EXIT_WITH_FALLBACKS: i32 = 4;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// Records produced by this invocation.
    pub generated: usize,
    /// Records already present (resume).
    pub reused: usize,
    pub report: ExperimentReport,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.fallbacks > 0 {
            EXIT_WITH_FALLBACKS
        } else {
            0
        }
    }
}

fn backend_for(spec: &BackendSpec, test: &[Example]) -> Result<Box<dyn Backend>, RunError> {
    let mut spec = spec.clone();
    if let BackendSpec::Live(cfg) = &mut spec {
        cfg.apply_env();
    }
    Ok(make_backend(&spec, test)?)
}

/// Runs a fresh experiment into `config.output_dir`, which must not already
/// hold records.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let inputs = config.load_inputs()?;
    let backend = backend_for(&config.backend, &inputs.dataset.test)?;
    run_loaded(config, inputs, backend.as_ref(), Execution::default(), false)
}

/// [`run_experiment`] with a caller-supplied backend and strategy.
pub fn run_experiment_with_backend(
    config: &RunConfig,
    backend: &dyn Backend,
    exec: Execution,
) -> Result<RunOutcome, RunError> {
    let inputs = config.load_inputs()?;
    run_loaded(config, inputs, backend, exec, false)
}

/// Continues the run stored in `dir`, generating only the missing records.
/// Refuses when the inputs no longer hash to the stored config hash.
pub fn resume(dir: &Path) -> Result<RunOutcome, RunError> {
    let config = stored_config(dir)?;
    let inputs = config.load_inputs()?;
    let backend = backend_for(&config.backend, &inputs.dataset.test)?;
    run_loaded(&config, inputs, backend.as_ref(), Execution::default(), true)
}

/// [`resume`] with a different worker count; workers do not affect outputs.
pub fn resume_with_workers(dir: &Path, workers: usize) -> Result<RunOutcome, RunError> {
    let mut config = stored_config(dir)?;
    config.workers = workers;
    let inputs = config.load_inputs()?;
    let backend = backend_for(&config.backend, &inputs.dataset.test)?;
    run_loaded(&config, inputs, backend.as_ref(), Execution::default(), true)
}

pub fn resume_with_backend(dir: &Path, backend: &dyn Backend, exec: Execution) -> Result<RunOutcome, RunError> {
    let config = stored_config(dir)?;
    let inputs = config.load_inputs()?;
    run_loaded(&config, inputs, backend, exec, true)
}

fn stored_config(dir: &Path) -> Result<RunConfig, RunError> {
    let mut config = store::read_manifest(dir)?.config;
    config.output_dir = dir.to_path_buf();
    Ok(config)
}

/// Rescores the records in `dir` and rewrites the reports.
pub fn score(dir: &Path) -> Result<ExperimentReport, RunError> {
    let manifest = store::read_manifest(dir)?;
    let mut config = manifest.config.clone();
    config.output_dir = dir.to_path_buf();
    let inputs = config.load_inputs()?;
    if inputs.config_hash != manifest.config_hash {
        return Err(RunError::HashMismatch {
            stored: manifest.config_hash,
            current: inputs.config_hash,
        });
    }
    let records = store::load_records(&dir.join(RECORDS_FILE), false)?;
    let report = build_report(
        &config,
        &inputs.config_hash,
        &inputs.template.version,
        &inputs.dataset.test,
        &records,
    )?;
    report::write_reports(dir, &report)?;
    Ok(report)
}

fn prepare_dir(config: &RunConfig, inputs: &LoadedInputs, resuming: bool) -> Result<(), RunError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let has_manifest = dir.join(MANIFEST_FILE).exists();
    if resuming {
        let stored = store::read_manifest(dir)?;
        if stored.config_hash != inputs.config_hash {
            return Err(RunError::HashMismatch {
                stored: stored.config_hash,
                current: inputs.config_hash.clone(),
            });
        }
        return Ok(());
    }
    if has_manifest || dir.join(RECORDS_FILE).exists() {
        return Err(RunError::AlreadyExists(dir.clone()));
    }
    store::write_manifest(
        dir,
        &Manifest {
            config_hash: inputs.config_hash.clone(),
            template_version: inputs.template.version.clone(),
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        },
    )
}

struct WorkItem<'a> {
    key: RecordKey,
    example: &'a Example,
    shots: &'a [Example],
}

fn run_loaded(
    config: &RunConfig,
    inputs: LoadedInputs,
    backend: &dyn Backend,
    exec: Execution,
    resuming: bool,
) -> Result<RunOutcome, RunError> {
    prepare_dir(config, &inputs, resuming)?;
    let records_path = config.output_dir.join(RECORDS_FILE);
    let existing = store::load_records(&records_path, true)?;
    let done: HashSet<RecordKey> = existing.iter().map(|r| r.key()).collect();

    let LoadedInputs {
        dataset,
        template,
        config_hash,
    } = inputs;
    let orders = shot_orders(config, &dataset)?;
    let mut items = Vec::new();
    for &k in &config.shot_counts {
        for &seed in &config.seeds {
            let shots = &orders[&(k, seed)];
            for example in &dataset.test {
                let key = RecordKey {
                    shots: k,
                    seed,
                    example_id: example.id,
                };
                if !done.contains(&key) {
                    items.push(WorkItem { key, example, shots });
                }
            }
        }
    }
    let total = items.len();
    log::info!(
        "{}: {} records present, {} to generate with backend {}",
        config.output_dir.display(),
        done.len(),
        total,
        backend.name()
    );

    let writer = store::RecordWriter::open(&records_path)?;
    let builder = PromptBuilder {
        lowercase_shots: config.lowercase_shots,
        ..PromptBuilder::new(&template, &dataset.taxonomy)
    };
    let params = GenerationParams {
        model: config.model.clone(),
        temperature: config.temperature,
        stop_sequence: config.stop_sequence.clone(),
        max_tokens: config.max_tokens,
    };
    let ctx = AcquireContext {
        task: config.task,
        taxonomy: &dataset.taxonomy,
        options: ValidationOptions {
            allow_implicit: config.allow_implicit_terms,
        },
        params: &params,
        max_attempts: config.max_attempts,
    };
    let finished = AtomicUsize::new(0);
    let step = (total / 20).max(1);
    exec.try_for_each(config.workers, &items, |item| -> Result<(), RunError> {
        let prompt = builder.build(item.shots, &item.example.sentence);
        let acq = acquire_label(item.example, &prompt, backend, item.key.seed, &ctx)?;
        if !acq.valid {
            log::warn!(
                "example {} (shots {}, seed {}): no valid label after {} attempts",
                item.key.example_id,
                item.key.shots,
                item.key.seed,
                acq.attempts
            );
        }
        writer.append(&PredictionRecord::new(item.key, &template.version, acq))?;
        let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
        if n % step == 0 || n == total {
            log::info!("{n}/{total} records");
        }
        Ok(())
    })?;
    drop(writer);

    let records = store::load_records(&records_path, false)?;
    let report = build_report(config, &config_hash, &template.version, &dataset.test, &records)?;
    report::write_reports(&config.output_dir, &report)?;
    Ok(RunOutcome {
        output_dir: config.output_dir.clone(),
        generated: total,
        reused: done.len(),
        report,
    })
}

/// Per (shot count, seed) shot order. The shot set of a shot count is the
/// same for every seed; each seed only reorders it.
fn shot_orders(config: &RunConfig, dataset: &DatasetSpec) -> Result<HashMap<(usize, u64), Vec<Example>>, RunError> {
    let mut out = HashMap::new();
    for &k in &config.shot_counts {
        let set = sample_shots(&dataset.train, k, config.sampling_seed)?;
        for &seed in &config.seeds {
            out.insert((k, seed), shuffle_shots(&set, seed));
        }
    }
    Ok(out)
}


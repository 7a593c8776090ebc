//! Evaluation harness for zero- and few-shot LLM prompting on aspect sentiment
//! quad prediction (ASQP) and target aspect sentiment detection (TASD).
//!
//! The pipeline is: load a corpus ([`corpus`]), sample and render few-shot
//! prompts ([`prompt`]), drive a completion backend ([`gateway`]), parse and
//! validate the generations with bounded regeneration ([`validator`]), merge
//! seed runs by majority vote ([`consistency`]) and score exact-match micro
//! P/R/F1 ([`metrics`]). [`runner`] ties the stages into a resumable,
//! JSONL-backed experiment grid.
//!
//! Data-parallel stages (request fan-out, randomized checks, large scoring
//! passes) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential iteration otherwise; see [`exec::Execution`].

pub mod consistency;
pub mod corpus;
pub mod exec;
pub mod gateway;
pub mod metrics;
pub mod prompt;
pub mod runner;
pub mod tuple_syntax;
pub mod validator;

pub use consistency::{merge_sc, SeedRunSet};
pub use corpus::{
    derive_tasd, parse_dataset, split_dataset, CorpusError, DatasetSpec, Example, Label,
    Polarity, SentimentTuple, Task, Taxonomy, IMPLICIT,
};
pub use exec::Execution;
pub use gateway::{make_backend, Backend, BackendSpec, GatewayError, GenerationRequest, RawGeneration};
pub use metrics::{aggregate_seeds, compare_conditions, element_prf, micro_prf, MetricsReport};
pub use prompt::{build_prompt, sample_shots, shuffle_shots, PromptTemplate, ShotSet};
pub use runner::{resume, run_experiment, RunConfig, RunError};
pub use validator::{acquire_label, parse_label, validate_label, Violation, ViolationKind};

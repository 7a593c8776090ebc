//! Parsing and validation of generated labels, plus the bounded
//! regeneration loop.
//!
//! A generation is valid when it is a list of one or more string tuples
//! of the task's arity, every polarity is `positive`, `negative` or
//! `neutral`, every category belongs to the taxonomy, and every aspect and
//! opinion term occurs verbatim (case-sensitive) in the sentence. `NULL`
//! marks an implicit term and is exempt from the substring rule unless
//! [`ValidationOptions::allow_implicit`] is off.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Label, Polarity, SentimentTuple, Task, Taxonomy, IMPLICIT};
use crate::gateway::{Backend, FinishReason, GatewayError, GenerationRequest, RequestContext};
use crate::tuple_syntax::parse_tuple_list;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

/// Offset between request seeds of consecutive regeneration attempts.
/// Attempt 1 uses the generation seed itself.
pub const ATTEMPT_SEED_STRIDE: u64 = 1000;

pub fn attempt_seed(generation_seed: u64, attempt: u32) -> u64 {
    generation_seed.wrapping_add(ATTEMPT_SEED_STRIDE.wrapping_mul(attempt.saturating_sub(1) as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Format,
    Arity,
    Sentiment,
    Category,
    TermAbsent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuple_index: Option<usize>,
}

impl Violation {
    fn new(kind: ViolationKind, detail: impl Into<String>, tuple_index: Option<usize>) -> Self {
        Violation {
            kind,
            detail: detail.into(),
            tuple_index,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tuple_index {
            Some(i) => write!(f, "{:?} (tuple {i}): {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLabel {
    pub tuples: Vec<Vec<String>>,
    pub arity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub allow_implicit: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { allow_implicit: true }
    }
}

/// Parses a raw generation. The gateway strips the closing `]`, so it is
/// re-appended when missing.
pub fn parse_label(text: &str, task: Task) -> Result<ParsedLabel, Violation> {
    let mut src = text.trim_end().to_string();
    if !src.ends_with(']') {
        src.push(']');
    }
    let tuples = parse_tuple_list(&src).map_err(|e| Violation::new(ViolationKind::Format, e.to_string(), None))?;
    if tuples.is_empty() {
        return Err(Violation::new(ViolationKind::Format, "empty list", None));
    }
    if let Some((i, t)) = tuples.iter().enumerate().find(|(_, t)| t.len() != task.arity()) {
        return Err(Violation::new(
            ViolationKind::Arity,
            format!("expected {} elements, found {}", task.arity(), t.len()),
            Some(i),
        ));
    }
    Ok(ParsedLabel {
        tuples,
        arity: task.arity(),
    })
}

fn check_term(
    term: &str,
    what: &str,
    sentence: &str,
    options: &ValidationOptions,
    i: usize,
    out: &mut Vec<Violation>,
) {
    if options.allow_implicit && term == IMPLICIT {
        return;
    }
    if term.trim().is_empty() {
        out.push(Violation::new(ViolationKind::TermAbsent, format!("empty {what}"), Some(i)));
    } else if !sentence.contains(term) {
        out.push(Violation::new(
            ViolationKind::TermAbsent,
            format!("{what} {term:?} not found in sentence"),
            Some(i),
        ));
    }
}

/// Checks every tuple and reports all violations together. On success the
/// tuples are returned as a set.
pub fn validate_label(
    label: &ParsedLabel,
    sentence: &str,
    taxonomy: &Taxonomy,
    task: Task,
    options: &ValidationOptions,
) -> Result<Label, Vec<Violation>> {
    if label.arity != task.arity() {
        return Err(vec![Violation::new(
            ViolationKind::Arity,
            format!("label arity {} does not match {task}", label.arity),
            None,
        )]);
    }
    let mut violations = Vec::new();
    let mut out = Label::new();
    for (i, fields) in label.tuples.iter().enumerate() {
        if fields.len() != task.arity() {
            violations.push(Violation::new(
                ViolationKind::Arity,
                format!("expected {} elements, found {}", task.arity(), fields.len()),
                Some(i),
            ));
            continue;
        }
        check_term(&fields[0], "aspect term", sentence, options, i, &mut violations);
        let category = fields[1].trim();
        if !taxonomy.contains(category) {
            violations.push(Violation::new(
                ViolationKind::Category,
                format!("category {category:?} is not in the taxonomy"),
                Some(i),
            ));
        }
        let polarity = fields[2].trim().parse::<Polarity>();
        if let Err(bad) = &polarity {
            violations.push(Violation::new(
                ViolationKind::Sentiment,
                format!("polarity {bad:?} is not positive, negative or neutral"),
                Some(i),
            ));
        }
        if task == Task::Asqp {
            check_term(&fields[3], "opinion term", sentence, options, i, &mut violations);
        }
        if let Ok(polarity) = polarity {
            out.insert(SentimentTuple {
                aspect: fields[0].clone(),
                category: category.to_string(),
                polarity,
                opinion: fields.get(3).cloned(),
            });
        }
    }
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(violations)
    }
}

/// Generation parameters shared by all attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub stop_sequence: String,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model: "gemma3:27b".into(),
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            stop_sequence: crate::gateway::DEFAULT_STOP.into(),
            max_tokens: crate::gateway::DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAttempt {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Result of the regeneration loop for one (example, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub attempts: u32,
    pub valid: bool,
    /// Empty when `valid` is false.
    pub label: Label,
    pub raw: Vec<RawAttempt>,
    /// One entry per attempt; empty for the accepted attempt.
    pub violations: Vec<Vec<Violation>>,
    pub latency_us: u64,
}

/// Everything the loop needs besides the example, prompt and seed.
#[derive(Clone, Copy)]
pub struct AcquireContext<'a> {
    pub task: Task,
    pub taxonomy: &'a Taxonomy,
    pub options: ValidationOptions,
    pub params: &'a GenerationParams,
    pub max_attempts: u32,
}

/// Generates, parses and validates up to `max_attempts` times, returning the
/// first valid label. Exhaustion yields the empty label. Gateway errors
/// abort the loop and propagate.
pub fn acquire_label(
    example: &Example,
    prompt: &str,
    backend: &dyn Backend,
    seed: u64,
    ctx: &AcquireContext<'_>,
) -> Result<Acquisition, GatewayError> {
    if ctx.max_attempts == 0 {
        return Err(GatewayError::InvalidRequest("max_attempts must be >= 1".into()));
    }
    let mut acq = Acquisition {
        attempts: 0,
        valid: false,
        label: Label::new(),
        raw: Vec::new(),
        violations: Vec::new(),
        latency_us: 0,
    };
    for attempt in 1..=ctx.max_attempts {
        let request = GenerationRequest {
            prompt: prompt.to_string(),
            temperature: ctx.params.temperature,
            stop_sequence: ctx.params.stop_sequence.clone(),
            seed: attempt_seed(seed, attempt),
            max_tokens: ctx.params.max_tokens,
            model: ctx.params.model.clone(),
            context: RequestContext {
                example_id: Some(example.id),
                generation_seed: seed,
                attempt,
            },
        };
        let generation = backend.generate(&request)?;
        acq.attempts = attempt;
        acq.latency_us = acq
            .latency_us
            .saturating_add(generation.latency.as_micros().min(u64::MAX as u128) as u64);
        acq.raw.push(RawAttempt {
            text: generation.text.clone(),
            finish_reason: generation.finish_reason,
        });
        let outcome = if generation.finish_reason == FinishReason::Error {
            Err(vec![Violation::new(ViolationKind::Format, "backend reported an error", None)])
        } else {
            parse_label(&generation.text, ctx.task).map_err(|v| vec![v]).and_then(|parsed| {
                validate_label(&parsed, &example.sentence, ctx.taxonomy, ctx.task, &ctx.options)
            })
        };
        match outcome {
            Ok(label) => {
                acq.valid = true;
                acq.label = label;
                acq.violations.push(Vec::new());
                return Ok(acq);
            }
            Err(v) => {
                log::debug!("example {} seed {seed} attempt {attempt}: {} violation(s)", example.id, v.len());
                acq.violations.push(v);
            }
        }
    }
    Ok(acq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptStep, ScriptedBackend};

    fn taxonomy() -> Taxonomy {
        Taxonomy::new(["food quality", "service general"]).unwrap()
    }

    const SENTENCE: &str = "The pizza was delicious but the waiter was rude .";

    fn validate(text: &str, task: Task) -> Result<Label, Vec<Violation>> {
        let parsed = parse_label(text, task).map_err(|v| vec![v])?;
        validate_label(&parsed, SENTENCE, &taxonomy(), task, &ValidationOptions::default())
    }

    fn kinds(r: Result<Label, Vec<Violation>>) -> Vec<ViolationKind> {
        r.unwrap_err().into_iter().map(|v| v.kind).collect()
    }

    #[test]
    fn stop_truncated_output_parses() {
        let p = parse_label(r#"[("pizza", "food quality", "positive", "delicious")"#, Task::Asqp).unwrap();
        assert_eq!(p.tuples.len(), 1);
        assert_eq!(p.arity, 4);
    }

    #[test]
    fn arity_and_format() {
        let v = parse_label(r#"[("a","b","c")]"#, Task::Asqp).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Arity);
        let v = parse_label("Sure! The label is ...", Task::Asqp).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Format);
        let v = parse_label("[", Task::Asqp).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Format);
        let v = parse_label("Here: [('pizza', 'food quality', 'positive')", Task::Tasd).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Format);
    }

    #[test]
    fn sentiment_violation() {
        let k = kinds(validate("[('pizza', 'food quality', 'very positive', 'delicious')", Task::Asqp));
        assert_eq!(k, vec![ViolationKind::Sentiment]);
    }

    #[test]
    fn case_sensitive_terms() {
        let k = kinds(validate("[('Pizza', 'food quality', 'positive', 'delicious')", Task::Asqp));
        assert_eq!(k, vec![ViolationKind::TermAbsent]);
    }

    #[test]
    fn valid_quad() {
        let l = validate("[('pizza', 'food quality', 'positive', 'delicious')", Task::Asqp).unwrap();
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn all_violations_reported() {
        let r = validate(
            "[('pasta', 'food taste', 'good', 'yummy'), ('waiter', 'service general', 'negative', 'rude')",
            Task::Asqp,
        );
        let v = r.unwrap_err();
        let k: Vec<_> = v.iter().map(|v| (v.kind, v.tuple_index)).collect();
        assert_eq!(
            k,
            vec![
                (ViolationKind::TermAbsent, Some(0)),
                (ViolationKind::Category, Some(0)),
                (ViolationKind::Sentiment, Some(0)),
                (ViolationKind::TermAbsent, Some(0)),
            ]
        );
    }

    #[test]
    fn implicit_terms_follow_flag() {
        let text = "[('NULL', 'food quality', 'positive', 'delicious')";
        assert!(validate(text, Task::Asqp).is_ok());
        let parsed = parse_label(text, Task::Asqp).unwrap();
        let strict = ValidationOptions { allow_implicit: false };
        let r = validate_label(&parsed, SENTENCE, &taxonomy(), Task::Asqp, &strict);
        assert_eq!(kinds(r), vec![ViolationKind::TermAbsent]);
    }

    #[test]
    fn whitespace_is_significant_and_duplicates_collapse() {
        let k = kinds(validate("[('pizza  ', 'food quality', 'positive', 'delicious')", Task::Asqp));
        assert_eq!(k, vec![ViolationKind::TermAbsent]);
        let k = kinds(validate("[('', 'food quality', 'positive', 'delicious')", Task::Asqp));
        assert_eq!(k, vec![ViolationKind::TermAbsent]);
        let l = validate(
            "[('pizza', 'food quality', 'positive', 'delicious'), (\"pizza\", \"food quality\", \"positive\", \"delicious\")",
            Task::Asqp,
        )
        .unwrap();
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn tasd_triplets() {
        let l = validate("[('waiter', 'service general', 'negative')]", Task::Tasd).unwrap();
        assert!(l.iter().all(|t| t.opinion.is_none()));
    }

    fn example() -> Example {
        Example {
            id: 0,
            sentence: SENTENCE.into(),
            gold: Label::new(),
        }
    }

    fn acquire(backend: &ScriptedBackend, max_attempts: u32) -> Acquisition {
        let tax = taxonomy();
        let params = GenerationParams::default();
        let ctx = AcquireContext {
            task: Task::Asqp,
            taxonomy: &tax,
            options: ValidationOptions::default(),
            params: &params,
            max_attempts,
        };
        acquire_label(&example(), "prompt", backend, 0, &ctx).unwrap()
    }

    #[test]
    fn first_attempt_valid() {
        let b = ScriptedBackend::new(vec![ScriptStep::stop("[('pizza', 'food quality', 'positive', 'delicious')")]);
        let a = acquire(&b, 10);
        assert_eq!((a.attempts, a.valid, a.label.len()), (1, true, 1));
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn third_attempt_valid() {
        let b = ScriptedBackend::new(vec![
            ScriptStep::stop("no"),
            ScriptStep::stop("[('Pizza', 'food quality', 'positive', 'delicious')"),
            ScriptStep::stop("[('pizza', 'food quality', 'positive', 'delicious')"),
        ]);
        let a = acquire(&b, 10);
        assert_eq!(a.attempts, 3);
        assert!(a.valid);
        assert_eq!(a.violations[0][0].kind, ViolationKind::Format);
        assert_eq!(a.violations[1][0].kind, ViolationKind::TermAbsent);
        assert!(a.violations[2].is_empty());
    }

    #[test]
    fn exhaustion_yields_empty_label() {
        let b = ScriptedBackend::new(vec![ScriptStep::stop("nothing useful")]);
        let a = acquire(&b, 10);
        assert_eq!(a.attempts, 10);
        assert!(!a.valid);
        assert!(a.label.is_empty());
        assert_eq!(a.raw.len(), 10);
        assert_eq!(a.violations.len(), 10);
        assert_eq!(b.calls(), 10);
    }

    #[test]
    fn attempt_seeds() {
        assert_eq!(attempt_seed(3, 1), 3);
        assert_eq!(attempt_seed(3, 2), 1003);
        assert_eq!(attempt_seed(4, 10), 9004);
    }
}

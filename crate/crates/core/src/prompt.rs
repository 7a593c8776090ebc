//! Few-shot sampling and prompt rendering.
//!
//! Templates are TOML files (see `templates/`) whose `layout` string names
//! the six prompt regions with placeholders, in this order:
//! `{preamble}`, `{elements}`, `{categories}`, `{format_instruction}`,
//! `{examples}`, `{target}`. The example region renders to nothing for
//! zero-shot prompts.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{render_label, Example, Label, SentimentTuple, Task, Taxonomy, IMPLICIT};
use crate::tuple_syntax::TupleStyle;

pub const DEFAULT_ASQP_TEMPLATE: &str = include_str!("../templates/asqp-default-v1.toml");
pub const DEFAULT_TASD_TEMPLATE: &str = include_str!("../templates/tasd-default-v1.toml");

/// Shot counts evaluated by default.
pub const STANDARD_SHOT_COUNTS: [usize; 6] = [0, 10, 20, 30, 40, 50];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot sample {k} shots from {available} training examples")]
    NotEnoughExamples { k: usize, available: usize },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementExplanation {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Preamble,
    Elements,
    Categories,
    FormatInstruction,
    Examples,
    Target,
}

const SLOTS: [(Slot, &str); 6] = [
    (Slot::Preamble, "{preamble}"),
    (Slot::Elements, "{elements}"),
    (Slot::Categories, "{categories}"),
    (Slot::FormatInstruction, "{format_instruction}"),
    (Slot::Examples, "{examples}"),
    (Slot::Target, "{target}"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TemplateFile {
    version: String,
    task: Task,
    preamble: String,
    elements: Vec<ElementExplanation>,
    format_instruction: String,
    category_block_header: String,
    example_block_header: String,
    #[serde(default = "default_text_prefix")]
    text_prefix: String,
    #[serde(default = "default_label_prefix")]
    label_prefix: String,
    #[serde(default = "default_layout")]
    layout: String,
}

fn default_text_prefix() -> String {
    "Text: ".into()
}

fn default_label_prefix() -> String {
    "Sentiment elements: ".into()
}

fn default_layout() -> String {
    "{preamble}\n\n{elements}\n\n{categories}\n\n{format_instruction}\n\n{examples}{target}".into()
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub version: String,
    pub task: Task,
    pub task_preamble: String,
    pub element_explanations: Vec<ElementExplanation>,
    pub format_instruction: String,
    pub category_block_header: String,
    pub example_block_header: String,
    pub text_prefix: String,
    pub label_prefix: String,
    /// Raw template source, hashed into run manifests.
    pub source: String,
    layout: Vec<Segment>,
}

impl PromptTemplate {
    pub fn from_toml(source: &str) -> Result<Self, PromptError> {
        let file: TemplateFile =
            toml::from_str(source).map_err(|e| PromptError::Template(e.to_string()))?;
        let layout = parse_layout(&file.layout)?;
        let template = PromptTemplate {
            version: file.version,
            task: file.task,
            task_preamble: file.preamble,
            element_explanations: file.elements,
            format_instruction: file.format_instruction,
            category_block_header: file.category_block_header,
            example_block_header: file.example_block_header,
            text_prefix: file.text_prefix,
            label_prefix: file.label_prefix,
            source: source.to_string(),
            layout,
        };
        template.check()?;
        Ok(template)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let source = fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&source)
    }

    pub fn default_for(task: Task) -> Self {
        let src = match task {
            Task::Asqp => DEFAULT_ASQP_TEMPLATE,
            Task::Tasd => DEFAULT_TASD_TEMPLATE,
        };
        Self::from_toml(src).expect("built-in template is valid")
    }

    fn check(&self) -> Result<(), PromptError> {
        if self.version.trim().is_empty() {
            return Err(PromptError::Template("empty version".into()));
        }
        if self.element_explanations.len() != self.task.arity() {
            return Err(PromptError::Template(format!(
                "{} template must explain {} elements, found {}",
                self.task,
                self.task.arity(),
                self.element_explanations.len()
            )));
        }
        if !self.format_instruction.to_lowercase().contains("exact") {
            return Err(PromptError::Template(
                "format instruction must state the exact-phrase requirement".into(),
            ));
        }
        Ok(())
    }
}

fn parse_layout(layout: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut rest = layout;
    let mut next_slot = 0;
    while !rest.is_empty() {
        let found = SLOTS
            .iter()
            .filter_map(|(slot, name)| rest.find(name).map(|at| (at, *slot, name.len())))
            .min_by_key(|(at, _, _)| *at);
        match found {
            Some((at, slot, len)) => {
                if at > 0 {
                    segments.push(Segment::Text(rest[..at].to_string()));
                }
                if next_slot >= SLOTS.len() || SLOTS[next_slot].0 != slot {
                    return Err(PromptError::Template(format!(
                        "layout placeholders must appear once each, in the order {}",
                        SLOTS.iter().map(|(_, n)| *n).collect::<Vec<_>>().join(", ")
                    )));
                }
                next_slot += 1;
                segments.push(Segment::Slot(slot));
                rest = &rest[at + len..];
            }
            None => {
                segments.push(Segment::Text(rest.to_string()));
                rest = "";
            }
        }
    }
    if next_slot != SLOTS.len() {
        return Err(PromptError::Template(format!(
            "layout is missing placeholder {}",
            SLOTS[next_slot].1
        )));
    }
    Ok(segments)
}

/// Few-shot examples for one experiment cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSet {
    pub examples: Vec<Example>,
    pub source_seed: u64,
    pub k: usize,
}

impl ShotSet {
    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }
}

/// Draws `k` distinct training examples. Sampling is a seeded shuffle
/// truncated to `k`, so for a fixed seed smaller shot sets are prefixes of
/// larger ones.
pub fn sample_shots(train: &[Example], k: usize, sampling_seed: u64) -> Result<ShotSet, PromptError> {
    if k > train.len() {
        return Err(PromptError::NotEnoughExamples {
            k,
            available: train.len(),
        });
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sampling_seed));
    Ok(ShotSet {
        examples: order[..k].iter().map(|&i| train[i].clone()).collect(),
        source_seed: sampling_seed,
        k,
    })
}

/// Orders the shot set for one generation seed. Uses a separate ChaCha
/// stream from [`sample_shots`] so equal seed values do not correlate.
pub fn shuffle_shots(shots: &ShotSet, generation_seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(generation_seed);
    rng.set_stream(1);
    let mut out = shots.examples.clone();
    out.shuffle(&mut rng);
    out
}

/// Renders prompts for one task and taxonomy.
#[derive(Debug, Clone)]
pub struct PromptBuilder<'a> {
    pub template: &'a PromptTemplate,
    pub taxonomy: &'a Taxonomy,
    /// Lowercase shot sentences and terms (the uncased prompt variant).
    pub lowercase_shots: bool,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(template: &'a PromptTemplate, taxonomy: &'a Taxonomy) -> Self {
        PromptBuilder {
            template,
            taxonomy,
            lowercase_shots: false,
        }
    }

    pub fn build(&self, shots: &[Example], target: &str) -> String {
        let t = self.template;
        let mut out = String::new();
        for seg in &t.layout {
            match seg {
                Segment::Text(s) => out.push_str(s),
                Segment::Slot(Slot::Preamble) => out.push_str(&t.task_preamble),
                Segment::Slot(Slot::Elements) => {
                    let lines: Vec<String> = t
                        .element_explanations
                        .iter()
                        .map(|e| format!("- {}: {}", e.name, e.text))
                        .collect();
                    out.push_str(&lines.join("\n"));
                }
                Segment::Slot(Slot::Categories) => {
                    out.push_str(&t.category_block_header);
                    for c in self.taxonomy.categories() {
                        out.push_str("\n- ");
                        out.push_str(c);
                    }
                }
                Segment::Slot(Slot::FormatInstruction) => out.push_str(&t.format_instruction),
                Segment::Slot(Slot::Examples) => {
                    if !shots.is_empty() {
                        out.push_str(&t.example_block_header);
                        out.push_str("\n\n");
                        for ex in shots {
                            self.push_shot(&mut out, ex);
                        }
                    }
                }
                Segment::Slot(Slot::Target) => {
                    out.push_str(&t.text_prefix);
                    out.push_str(target);
                    out.push('\n');
                    out.push_str(&t.label_prefix);
                }
            }
        }
        out
    }

    fn push_shot(&self, out: &mut String, ex: &Example) {
        let (sentence, label) = if self.lowercase_shots {
            let lower = |s: &str| if s == IMPLICIT { s.to_string() } else { s.to_lowercase() };
            let label: Label = ex
                .gold
                .iter()
                .map(|q| SentimentTuple {
                    aspect: lower(&q.aspect),
                    opinion: q.opinion.as_deref().map(lower),
                    ..q.clone()
                })
                .collect();
            (ex.sentence.to_lowercase(), label)
        } else {
            (ex.sentence.clone(), ex.gold.clone())
        };
        out.push_str(&self.template.text_prefix);
        out.push_str(&sentence);
        out.push('\n');
        out.push_str(&self.template.label_prefix);
        out.push_str(&render_label(&label, TupleStyle::Parens));
        out.push_str("\n\n");
    }
}

/// Cased prompt for `target` with `shots` in the given order.
pub fn build_prompt(template: &PromptTemplate, taxonomy: &Taxonomy, shots: &[Example], target: &str) -> String {
    PromptBuilder::new(template, taxonomy).build(shots, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;
    use crate::tuple_syntax::parse_tuple_list;

    fn taxonomy() -> Taxonomy {
        Taxonomy::new(["food quality", "service general", "ambience general"]).unwrap()
    }

    fn train(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                id: i,
                sentence: format!("The pizza number {i} was Great ."),
                gold: [SentimentTuple::quad("pizza", "food quality", Polarity::Positive, "Great")]
                    .into_iter()
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn default_templates_load() {
        assert_eq!(PromptTemplate::default_for(Task::Asqp).element_explanations.len(), 4);
        assert_eq!(PromptTemplate::default_for(Task::Tasd).element_explanations.len(), 3);
    }

    #[test]
    fn template_checks() {
        let bad_arity = DEFAULT_ASQP_TEMPLATE.replace("task = \"asqp\"", "task = \"tasd\"");
        assert!(PromptTemplate::from_toml(&bad_arity).is_err());
        let no_exact = DEFAULT_ASQP_TEMPLATE.replace("exact phrases", "phrases");
        assert!(PromptTemplate::from_toml(&no_exact).is_err());
        let bad_order = DEFAULT_ASQP_TEMPLATE.replace("{examples}{target}", "{target}{examples}");
        assert!(PromptTemplate::from_toml(&bad_order).is_err());
        let missing = DEFAULT_ASQP_TEMPLATE.replace("{examples}", "");
        assert!(PromptTemplate::from_toml(&missing).is_err());
    }

    #[test]
    fn zero_shot() {
        let shots = sample_shots(&train(5), 0, 0).unwrap();
        assert!(shots.examples.is_empty());
        assert!(shuffle_shots(&shots, 3).is_empty());
        let t = PromptTemplate::default_for(Task::Asqp);
        let p = build_prompt(&t, &taxonomy(), &[], "Nice staff .");
        assert!(!p.contains(&t.example_block_header));
        for c in taxonomy().categories() {
            assert!(p.contains(c.as_str()));
        }
        assert!(p.ends_with("Text: Nice staff .\nSentiment elements: "));
    }

    #[test]
    fn sampling_is_deterministic_and_distinct() {
        let tr = train(834);
        let a = sample_shots(&tr, 10, 0).unwrap();
        let b = sample_shots(&tr, 10, 0).unwrap();
        assert_eq!(a.ids(), b.ids());
        let mut ids = a.ids();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert!(ids.iter().all(|&i| i < 834));
        assert!(matches!(sample_shots(&tr[..5], 10, 0), Err(PromptError::NotEnoughExamples { .. })));
    }

    #[test]
    fn smaller_shot_sets_are_prefixes() {
        let tr = train(100);
        let s10 = sample_shots(&tr, 10, 7).unwrap().ids();
        let s20 = sample_shots(&tr, 20, 7).unwrap().ids();
        assert_eq!(&s20[..10], &s10[..]);
    }

    #[test]
    fn shuffles_differ_across_seeds() {
        let shots = sample_shots(&train(50), 10, 0).unwrap();
        let orders: Vec<Vec<usize>> = (0..5)
            .map(|s| shuffle_shots(&shots, s).iter().map(|e| e.id).collect())
            .collect();
        for o in &orders {
            let mut a = o.clone();
            let mut b = shots.ids();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
        let mut distinct = orders.clone();
        distinct.sort();
        distinct.dedup();
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn shot_labels_reparse() {
        let t = PromptTemplate::default_for(Task::Asqp);
        let tr = train(3);
        let p = build_prompt(&t, &taxonomy(), &tr, "Target sentence .");
        let line = p
            .lines()
            .find(|l| l.starts_with("Sentiment elements: [("))
            .unwrap();
        let parsed = parse_tuple_list(line.trim_start_matches("Sentiment elements: ")).unwrap();
        assert_eq!(parsed, vec![vec!["pizza", "food quality", "positive", "Great"]]);
    }

    #[test]
    fn lowercase_variant() {
        let t = PromptTemplate::default_for(Task::Asqp);
        let tax = taxonomy();
        let mut b = PromptBuilder::new(&t, &tax);
        b.lowercase_shots = true;
        let p = b.build(&train(1), "Target .");
        assert!(p.contains("the pizza number 0 was great ."));
        assert!(p.contains("('pizza', 'food quality', 'positive', 'great')"));
        assert!(p.contains("Text: Target ."));
    }
}

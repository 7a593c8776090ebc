//! ASQP/TASD corpora in the `SENTENCE####[[a, c, p, o], ...]` line format.
//!
//! Quadruples and triplets share one representation, [`SentimentTuple`]; a
//! triplet is a tuple whose `opinion` is `None`. The owning [`Task`] decides
//! which arity is legal.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tuple_syntax::{parse_tuple_list, render_tuple_list, TupleStyle};

/// Sentinel for an implicit aspect or opinion term.
pub const IMPLICIT: &str = "NULL";

const SEPARATOR: &str = "####";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: empty gold label")]
    EmptyGold { line: usize },
    #[error("line {line}: category {category:?} is not in the taxonomy")]
    UnknownCategory { line: usize, category: String },
    #[error("line {line}: expected {expected}-tuples, found a {found}-tuple")]
    Arity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown sentiment polarity {value:?}")]
    UnknownPolarity { line: usize, value: String },
    #[error("line {line}: term {term:?} does not occur in the sentence")]
    TermNotInSentence { line: usize, term: String },
    #[error("line {line}: empty term")]
    EmptyTerm { line: usize },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("expected a {expected} dataset, got {found}")]
    TaskMismatch { expected: Task, found: Task },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("cannot split an empty example list")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "asqp", alias = "ASQP")]
    Asqp,
    #[serde(rename = "tasd", alias = "TASD")]
    Tasd,
}

impl Task {
    pub fn arity(self) -> usize {
        match self {
            Task::Asqp => 4,
            Task::Tasd => 3,
        }
    }

    pub fn elements(self) -> &'static [Element] {
        match self {
            Task::Asqp => &[
                Element::AspectTerm,
                Element::Category,
                Element::Polarity,
                Element::OpinionTerm,
            ],
            Task::Tasd => &[Element::AspectTerm, Element::Category, Element::Polarity],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Asqp => "asqp",
            Task::Tasd => "tasd",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "asqp" => Ok(Task::Asqp),
            "tasd" => Ok(Task::Tasd),
            _ => Err(format!("unknown task {s:?} (expected asqp or tasd)")),
        }
    }
}

/// One sentiment element of a tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    AspectTerm,
    Category,
    Polarity,
    OpinionTerm,
}

/// (aspect term, category, polarity, opinion term). `opinion` is `None`
/// for TASD triplets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentimentTuple {
    pub aspect: String,
    pub category: String,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinion: Option<String>,
}

impl SentimentTuple {
    pub fn quad(
        aspect: impl Into<String>,
        category: impl Into<String>,
        polarity: Polarity,
        opinion: impl Into<String>,
    ) -> Self {
        SentimentTuple {
            aspect: aspect.into(),
            category: category.into(),
            polarity,
            opinion: Some(opinion.into()),
        }
    }

    pub fn triplet(aspect: impl Into<String>, category: impl Into<String>, polarity: Polarity) -> Self {
        SentimentTuple {
            aspect: aspect.into(),
            category: category.into(),
            polarity,
            opinion: None,
        }
    }

    pub fn arity(&self) -> usize {
        if self.opinion.is_some() {
            4
        } else {
            3
        }
    }

    /// Drops the opinion term.
    pub fn to_triplet(&self) -> SentimentTuple {
        SentimentTuple {
            opinion: None,
            ..self.clone()
        }
    }

    /// Fields in canonical order (aspect, category, polarity[, opinion]).
    pub fn fields(&self) -> Vec<&str> {
        let mut out = vec![self.aspect.as_str(), self.category.as_str(), self.polarity.as_str()];
        if let Some(o) = &self.opinion {
            out.push(o.as_str());
        }
        out
    }

    pub fn element(&self, element: Element) -> Option<&str> {
        match element {
            Element::AspectTerm => Some(&self.aspect),
            Element::Category => Some(&self.category),
            Element::Polarity => Some(self.polarity.as_str()),
            Element::OpinionTerm => self.opinion.as_deref(),
        }
    }

    /// Builds a tuple from raw string fields without validating terms.
    pub fn from_fields(fields: &[String], task: Task) -> Result<Self, String> {
        if fields.len() != task.arity() {
            return Err(format!(
                "expected {} fields, found {}",
                task.arity(),
                fields.len()
            ));
        }
        let polarity = fields[2].trim().parse::<Polarity>()?;
        Ok(SentimentTuple {
            aspect: fields[0].clone(),
            category: fields[1].trim().to_string(),
            polarity,
            opinion: fields.get(3).cloned(),
        })
    }
}

/// A set of tuples. Set semantics and a total order make serialization and
/// scoring deterministic.
pub type Label = BTreeSet<SentimentTuple>;

/// Renders a label in the given tuple style, in canonical tuple order.
pub fn render_label(label: &Label, style: TupleStyle) -> String {
    render_tuple_list(label.iter().map(|t| t.fields()), style)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub sentence: String,
    pub gold: Label,
}

impl Example {
    /// Canonical corpus line for this example.
    pub fn to_line(&self) -> String {
        format!(
            "{}{}{}",
            self.sentence,
            SEPARATOR,
            render_label(&self.gold, TupleStyle::Brackets)
        )
    }
}

/// Ordered set of allowed aspect categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy(Vec<String>);

impl Taxonomy {
    pub fn new<I, S>(categories: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in categories {
            let c = c.as_ref().trim().to_string();
            if c.is_empty() {
                return Err(CorpusError::Taxonomy("empty category".into()));
            }
            if !seen.insert(c.clone()) {
                return Err(CorpusError::Taxonomy(format!("duplicate category {c:?}")));
            }
            out.push(c);
        }
        if out.is_empty() {
            return Err(CorpusError::Taxonomy("no categories".into()));
        }
        Ok(Taxonomy(out))
    }

    /// One category per line; blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Taxonomy::new(text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn contains(&self, category: &str) -> bool {
        let c = category.trim();
        self.0.iter().any(|x| x == c)
    }

    pub fn categories(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub task: Task,
    pub taxonomy: Taxonomy,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub domain: String,
}

impl DatasetSpec {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Loads `train.txt`, `dev.txt` and `test.txt` from `dir`.
    pub fn load_dir(
        name: &str,
        domain: &str,
        dir: &Path,
        task: Task,
        taxonomy: Taxonomy,
    ) -> Result<Self, CorpusError> {
        let load = |file: &str| parse_dataset(&dir.join(file), task, &taxonomy);
        let train = load("train.txt")?.examples;
        let dev = load("dev.txt")?.examples;
        let test = load("test.txt")?.examples;
        Ok(DatasetSpec {
            name: name.to_string(),
            task,
            taxonomy,
            train,
            dev,
            test,
            domain: domain.to_string(),
        })
    }
}

/// Counts gathered while parsing a split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub examples: usize,
    pub tuples: usize,
    pub duplicates_collapsed: usize,
    pub implicit_aspects: usize,
    pub implicit_opinions: usize,
}

#[derive(Debug, Clone)]
pub struct ParsedSplit {
    pub examples: Vec<Example>,
    pub stats: ParseStats,
}

pub fn parse_dataset(path: &Path, task: Task, taxonomy: &Taxonomy) -> Result<ParsedSplit, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = parse_dataset_str(&text, task, taxonomy)?;
    if parsed.stats.implicit_opinions > 0 {
        log::info!(
            "{}: {} implicit ({IMPLICIT}) opinion terms",
            path.display(),
            parsed.stats.implicit_opinions
        );
    }
    Ok(parsed)
}

/// Parses corpus text. Blank lines are skipped; error line numbers are
/// 1-based physical lines.
pub fn parse_dataset_str(text: &str, task: Task, taxonomy: &Taxonomy) -> Result<ParsedSplit, CorpusError> {
    let mut stats = ParseStats::default();
    let mut examples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let example = parse_line(line, line_no, examples.len(), task, taxonomy, &mut stats)?;
        examples.push(example);
    }
    stats.examples = examples.len();
    Ok(ParsedSplit { examples, stats })
}

fn parse_line(
    line: &str,
    line_no: usize,
    id: usize,
    task: Task,
    taxonomy: &Taxonomy,
    stats: &mut ParseStats,
) -> Result<Example, CorpusError> {
    let (sentence, labels) = line.split_once(SEPARATOR).ok_or(CorpusError::Malformed {
        line: line_no,
        message: format!("missing '{SEPARATOR}' separator"),
    })?;
    let tuples = parse_tuple_list(labels).map_err(|e| CorpusError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    if tuples.is_empty() {
        return Err(CorpusError::EmptyGold { line: line_no });
    }
    let mut gold = Label::new();
    for fields in &tuples {
        if fields.len() != task.arity() {
            return Err(CorpusError::Arity {
                line: line_no,
                expected: task.arity(),
                found: fields.len(),
            });
        }
        let tuple = SentimentTuple::from_fields(fields, task).map_err(|value| {
            CorpusError::UnknownPolarity {
                line: line_no,
                value,
            }
        })?;
        if !taxonomy.contains(&tuple.category) {
            return Err(CorpusError::UnknownCategory {
                line: line_no,
                category: tuple.category,
            });
        }
        check_term(&tuple.aspect, sentence, line_no)?;
        if tuple.aspect == IMPLICIT {
            stats.implicit_aspects += 1;
        }
        if let Some(o) = &tuple.opinion {
            check_term(o, sentence, line_no)?;
            if o == IMPLICIT {
                stats.implicit_opinions += 1;
            }
        }
        if !gold.insert(tuple) {
            stats.duplicates_collapsed += 1;
            log::warn!("line {line_no}: duplicate gold tuple collapsed");
        }
    }
    stats.tuples += gold.len();
    Ok(Example {
        id,
        sentence: sentence.to_string(),
        gold,
    })
}

fn check_term(term: &str, sentence: &str, line: usize) -> Result<(), CorpusError> {
    if term == IMPLICIT {
        return Ok(());
    }
    if term.trim().is_empty() {
        return Err(CorpusError::EmptyTerm { line });
    }
    if !sentence.contains(term) {
        return Err(CorpusError::TermNotInSentence {
            line,
            term: term.to_string(),
        });
    }
    Ok(())
}

/// Projects every quad to its (a, c, p) triplet, discarding per-sentence
/// duplicates.
pub fn derive_tasd_examples(examples: &[Example]) -> Vec<Example> {
    examples
        .iter()
        .map(|ex| Example {
            id: ex.id,
            sentence: ex.sentence.clone(),
            gold: ex.gold.iter().map(SentimentTuple::to_triplet).collect(),
        })
        .collect()
}

pub fn derive_tasd(dataset: &DatasetSpec) -> Result<DatasetSpec, CorpusError> {
    if dataset.task != Task::Asqp {
        return Err(CorpusError::TaskMismatch {
            expected: Task::Asqp,
            found: dataset.task,
        });
    }
    Ok(DatasetSpec {
        name: dataset.name.clone(),
        task: Task::Tasd,
        taxonomy: dataset.taxonomy.clone(),
        train: derive_tasd_examples(&dataset.train),
        dev: derive_tasd_examples(&dataset.dev),
        test: derive_tasd_examples(&dataset.test),
        domain: dataset.domain.clone(),
    })
}

/// Seeded shuffle followed by a split into three parts. The second and third
/// parts get `floor(n * ratio)` examples; the first takes the remainder.
/// Example ids are kept, so the parts stay disjoint by id.
pub fn split_dataset(
    examples: &[Example],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratios(ratios));
    }
    let n = examples.len();
    // The epsilon absorbs representation error such as 10 * 0.7 = 7.000000000000001
    // or 2000 * 0.1 landing just below an integer.
    let part = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let (second, third) = (part(ratios[1]), part(ratios[2]));
    let first = n - second - third;

    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rest = shuffled.split_off(first);
    let (b, c) = rest.split_at(second);
    Ok((shuffled, b.to_vec(), c.to_vec()))
}

/// Reassigns ids 0..n-1 in list order, as when a split is written to its own file.
pub fn reindex(examples: &mut [Example]) {
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = i;
    }
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<(), CorpusError> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&ex.to_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

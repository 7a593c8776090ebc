#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use absa_harness::corpus::write_dataset;
use absa_harness::gateway::BackendSpec;
use absa_harness::{Example, Label, Polarity, RunConfig, SentimentTuple, Task, Taxonomy};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CATEGORIES: [&str; 13] = [
    "ambience general",
    "drinks prices",
    "drinks quality",
    "drinks style_options",
    "food general",
    "food prices",
    "food quality",
    "food style_options",
    "location general",
    "restaurant general",
    "restaurant miscellaneous",
    "restaurant prices",
    "service general",
];

const ASPECTS: [(&str, &str); 16] = [
    ("pizza", "food quality"),
    ("pasta", "food quality"),
    ("sushi", "food quality"),
    ("menu", "food style_options"),
    ("portions", "food style_options"),
    ("wine list", "drinks style_options"),
    ("cocktails", "drinks quality"),
    ("beer", "drinks prices"),
    ("waiter", "service general"),
    ("staff", "service general"),
    ("decor", "ambience general"),
    ("music", "ambience general"),
    ("prices", "restaurant prices"),
    ("location", "location general"),
    ("view", "location general"),
    ("place", "restaurant general"),
];

const POSITIVE: [&str; 5] = ["great", "delicious", "friendly", "excellent", "lovely"];
const NEGATIVE: [&str; 5] = ["terrible", "rude", "bland", "awful", "slow"];
const NEUTRAL: [&str; 2] = ["okay", "average"];

pub fn taxonomy() -> Taxonomy {
    Taxonomy::new(CATEGORIES).unwrap()
}

/// Restaurant-style sentences with 1 to 3 quads each, some with an implicit
/// aspect. No example holds two tuples that differ only in polarity.
pub fn synthetic_examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    while out.len() < n {
        let k = rng.gen_range(1..=3);
        let picks: Vec<_> = ASPECTS.choose_multiple(&mut rng, k).cloned().collect();
        let mut parts = Vec::new();
        let mut gold = Label::new();
        for (aspect, category) in picks {
            let (polarity, words): (Polarity, &[&str]) = match rng.gen_range(0..10) {
                0..=4 => (Polarity::Positive, &POSITIVE),
                5..=8 => (Polarity::Negative, &NEGATIVE),
                _ => (Polarity::Neutral, &NEUTRAL),
            };
            let opinion = *words.choose(&mut rng).unwrap();
            parts.push(format!("the {aspect} was {opinion}"));
            gold.insert(SentimentTuple::quad(aspect, category, polarity, opinion));
        }
        let mut sentence = parts.join(" and ");
        sentence[..1].make_ascii_uppercase();
        sentence.push_str(" .");
        if rng.gen_bool(0.15) {
            let opinion = if rng.gen_bool(0.5) { "great" } else { "awful" };
            let polarity = if opinion == "great" { Polarity::Positive } else { Polarity::Negative };
            sentence.push_str(&format!(" Overall it was {opinion} ."));
            gold.insert(SentimentTuple::quad("NULL", "restaurant general", polarity, opinion));
        }
        if !seen.insert(sentence.clone()) {
            continue;
        }
        out.push(Example {
            id: out.len(),
            sentence,
            gold,
        });
    }
    out
}

/// Writes train/dev/test files and a taxonomy into `dir`; returns
/// (dataset dir, taxonomy path).
pub fn write_corpus(dir: &Path, n_train: usize, n_dev: usize, n_test: usize, seed: u64) -> (PathBuf, PathBuf) {
    let all = synthetic_examples(n_train + n_dev + n_test, seed);
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    write_dataset(&data.join("train.txt"), &all[..n_train]).unwrap();
    write_dataset(&data.join("dev.txt"), &all[n_train..n_train + n_dev]).unwrap();
    write_dataset(&data.join("test.txt"), &all[n_train + n_dev..]).unwrap();
    let tax = dir.join("taxonomy.txt");
    fs::write(&tax, CATEGORIES.join("\n") + "\n").unwrap();
    (data, tax)
}

pub fn config(dir: &Path, task: Task, shots: &[usize], seeds: &[u64], backend: BackendSpec) -> RunConfig {
    let data = dir.join("data");
    if !data.join("train.txt").exists() {
        write_corpus(dir, 60, 10, 20, 7);
    }
    let text = format!(
        r#"
task = "{task}"
output_dir = "{out}"
[dataset]
name = "synthetic"
dir = "{data}"
taxonomy = "{tax}"
format = "asqp"
[backend]
kind = "replay_gold"
"#,
        out = dir.join("out").display(),
        data = data.display(),
        tax = dir.join("taxonomy.txt").display(),
    );
    let mut cfg = RunConfig::from_toml(&text).unwrap();
    cfg.shot_counts = shots.to_vec();
    cfg.seeds = seeds.to_vec();
    cfg.allow_any_shot_count = true;
    cfg.backend = backend;
    cfg
}

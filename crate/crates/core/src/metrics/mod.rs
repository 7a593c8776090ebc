//! Exact-match micro precision, recall and F1.
//!
//! Scores are percentages. Conventions:
//! * a ratio with a zero denominator is 0 (no predictions gives P = 0, no
//!   gold gives R = 0) and F1 is 0 when P + R = 0;
//! * element-level scores project each example's tuples onto one element,
//!   forming a per-example set, then count exactly as at tuple level.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Element, Label, Task};
use crate::exec::Execution;

mod significance;

pub use significance::{compare_conditions, Comparison, TestKind};

pub const ZERO_DIVISION_NOTE: &str =
    "Ratios with a zero denominator are reported as 0; F1 is 0 when precision + recall = 0.";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and gold labels ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("element {element:?} is not defined for {task}")]
    InvalidElement { element: Element, task: Task },
    #[error("no reports to aggregate")]
    Empty,
    #[error("significance test needs at least two samples per condition")]
    TooFewSamples,
    #[error("paired test needs equally long samples ({a} vs {b})")]
    UnpairedLengths { a: usize, b: usize },
    #[error("number of comparisons must be at least 1")]
    NoComparisons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Tuple,
    AspectTerm,
    OpinionTerm,
    Category,
    Polarity,
}

impl Granularity {
    pub fn element(self) -> Option<Element> {
        match self {
            Granularity::Tuple => None,
            Granularity::AspectTerm => Some(Element::AspectTerm),
            Granularity::OpinionTerm => Some(Element::OpinionTerm),
            Granularity::Category => Some(Element::Category),
            Granularity::Polarity => Some(Element::Polarity),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Tuple => "tuple",
            Granularity::AspectTerm => "aspect_term",
            Granularity::OpinionTerm => "opinion_term",
            Granularity::Category => "category",
            Granularity::Polarity => "polarity",
        }
    }

    /// Tuple level followed by every element of the task.
    pub fn all_for(task: Task) -> Vec<Granularity> {
        let mut out = vec![Granularity::Tuple];
        out.extend(task.elements().iter().map(|&e| Granularity::from(e)));
        out
    }
}

impl From<Element> for Granularity {
    fn from(e: Element) -> Self {
        match e {
            Element::AspectTerm => Granularity::AspectTerm,
            Element::Category => Granularity::Category,
            Element::Polarity => Granularity::Polarity,
            Element::OpinionTerm => Granularity::OpinionTerm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub granularity: Granularity,
    pub tp: u64,
    pub n_pred: u64,
    pub n_gold: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(granularity: Granularity, tp: u64, n_pred: u64, n_gold: u64) -> Self {
        let precision = ratio(tp, n_pred);
        let recall = ratio(tp, n_gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            granularity,
            tp,
            n_pred,
            n_gold,
            precision,
            recall,
            f1,
        }
    }
}

fn counts<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> (u64, u64, u64) {
    (
        pred.intersection(gold).count() as u64,
        pred.len() as u64,
        gold.len() as u64,
    )
}

fn check_lengths(preds: &[Label], golds: &[Label]) -> Result<(), MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    Ok(())
}

pub fn micro_prf(preds: &[Label], golds: &[Label]) -> Result<MetricsReport, MetricsError> {
    micro_prf_with(Execution::default(), preds, golds)
}

pub fn micro_prf_with(exec: Execution, preds: &[Label], golds: &[Label]) -> Result<MetricsReport, MetricsError> {
    check_lengths(preds, golds)?;
    let pairs: Vec<(&Label, &Label)> = preds.iter().zip(golds).collect();
    let (tp, np, ng) = exec.sum_counts(&pairs, |(p, g)| counts(p, g));
    Ok(MetricsReport::from_counts(Granularity::Tuple, tp, np, ng))
}

fn project(label: &Label, element: Element) -> BTreeSet<&str> {
    label.iter().filter_map(|t| t.element(element)).collect()
}

pub fn element_prf(
    preds: &[Label],
    golds: &[Label],
    element: Element,
    task: Task,
) -> Result<MetricsReport, MetricsError> {
    element_prf_with(Execution::default(), preds, golds, element, task)
}

pub fn element_prf_with(
    exec: Execution,
    preds: &[Label],
    golds: &[Label],
    element: Element,
    task: Task,
) -> Result<MetricsReport, MetricsError> {
    if !task.elements().contains(&element) {
        return Err(MetricsError::InvalidElement { element, task });
    }
    check_lengths(preds, golds)?;
    let pairs: Vec<(&Label, &Label)> = preds.iter().zip(golds).collect();
    let (tp, np, ng) = exec.sum_counts(&pairs, |(p, g)| counts(&project(p, element), &project(g, element)));
    Ok(MetricsReport::from_counts(element.into(), tp, np, ng))
}

/// Report at any granularity.
pub fn prf_at(
    preds: &[Label],
    golds: &[Label],
    granularity: Granularity,
    task: Task,
) -> Result<MetricsReport, MetricsError> {
    match granularity.element() {
        None => micro_prf(preds, golds),
        Some(e) => element_prf(preds, golds, e, task),
    }
}

/// Identifies one evaluated condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionId {
    pub dataset: String,
    pub task: Task,
    pub shots: usize,
    pub self_consistency: bool,
    pub model: String,
}

/// Mean/standard deviation across seed runs of one condition and granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: ConditionId,
    pub granularity: Granularity,
    pub per_seed_f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_precision: f64,
    pub std_precision: f64,
    pub mean_recall: f64,
    pub std_recall: f64,
}

/// Arithmetic mean and sample standard deviation (n - 1 denominator; 0 for
/// a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn aggregate_seeds(condition: ConditionId, reports: &[MetricsReport]) -> Result<ConditionSummary, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    let f1: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    let p: Vec<f64> = reports.iter().map(|r| r.precision).collect();
    let r: Vec<f64> = reports.iter().map(|r| r.recall).collect();
    let (mean_f1, std_f1) = mean_std(&f1);
    let (mean_precision, std_precision) = mean_std(&p);
    let (mean_recall, std_recall) = mean_std(&r);
    Ok(ConditionSummary {
        condition,
        granularity: first.granularity,
        per_seed_f1: f1,
        mean_f1,
        std_f1,
        mean_precision,
        std_precision,
        mean_recall,
        std_recall,
    })
}

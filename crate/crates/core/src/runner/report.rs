//! Scoring of stored predictions and the reports.json / reports.csv writers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::store::{PredictionRecord, RecordKey};
use super::{RunConfig, RunError};
use crate::consistency::{merge_sc, SeedRunSet};
use crate::corpus::{Example, Label};
use crate::metrics::{aggregate_seeds, prf_at, ConditionId, ConditionSummary, Granularity, MetricsReport, ZERO_DIVISION_NOTE};

pub const REPORT_JSON: &str = "reports.json";
pub const REPORT_CSV: &str = "reports.csv";

/// Score of one seed run at one granularity. `seed` is `None` for the
/// self-consistency merge, which pools all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: ConditionId,
    pub reports: Vec<SeedReport>,
    pub summaries: Vec<ConditionSummary>,
}

impl ConditionResult {
    pub fn summary(&self, granularity: Granularity) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.granularity == granularity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub template_version: String,
    pub n_test: usize,
    pub n_records: usize,
    /// Records whose regeneration budget ran out (scored as empty labels).
    pub fallbacks: usize,
    pub conditions: Vec<ConditionResult>,
    pub note: String,
}

impl ExperimentReport {
    pub fn condition(&self, shots: usize, self_consistency: bool) -> Option<&ConditionResult> {
        self.conditions
            .iter()
            .find(|c| c.condition.shots == shots && c.condition.self_consistency == self_consistency)
    }
}

fn scored(
    condition: ConditionId,
    runs: &[(Option<u64>, Vec<Label>)],
    golds: &[Label],
) -> Result<ConditionResult, RunError> {
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for g in Granularity::all_for(condition.task) {
        let mut per_seed = Vec::with_capacity(runs.len());
        for (seed, preds) in runs {
            let r = prf_at(preds, golds, g, condition.task)?;
            reports.push(SeedReport {
                seed: *seed,
                report: r.clone(),
            });
            per_seed.push(r);
        }
        summaries.push(aggregate_seeds(condition.clone(), &per_seed)?);
    }
    Ok(ConditionResult {
        condition,
        reports,
        summaries,
    })
}

/// Scores every (shot count, seed) cell over `test`. All cells must be
/// complete. With self-consistency enabled an extra condition per shot
/// count scores the majority merge of the seed runs.
pub fn build_report(
    config: &RunConfig,
    config_hash: &str,
    template_version: &str,
    test: &[Example],
    records: &[PredictionRecord],
) -> Result<ExperimentReport, RunError> {
    let by_key: HashMap<RecordKey, &PredictionRecord> = records.iter().map(|r| (r.key(), r)).collect();
    let golds: Vec<Label> = test.iter().map(|e| e.gold.clone()).collect();
    let mut conditions = Vec::new();
    let mut missing = 0usize;
    let mut used = 0usize;
    let mut fallbacks = 0usize;
    for &shots in &config.shot_counts {
        let mut runs = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let mut preds = Vec::with_capacity(test.len());
            for ex in test {
                let key = RecordKey {
                    shots,
                    seed,
                    example_id: ex.id,
                };
                match by_key.get(&key) {
                    Some(r) => {
                        used += 1;
                        if !r.valid {
                            fallbacks += 1;
                        }
                        preds.push(r.label.clone());
                    }
                    None => {
                        missing += 1;
                        preds.push(Label::new());
                    }
                }
            }
            runs.push((Some(seed), preds));
        }
        if missing > 0 {
            continue;
        }
        let id = |sc| ConditionId {
            dataset: config.dataset.name.clone(),
            task: config.task,
            shots,
            self_consistency: sc,
            model: config.model.clone(),
        };
        conditions.push(scored(id(false), &runs, &golds)?);
        if config.self_consistency {
            let merged: Vec<Label> = (0..test.len())
                .map(|i| {
                    let labels = runs.iter().map(|(_, p)| p[i].clone()).collect();
                    SeedRunSet::new(labels).map(|s| merge_sc(&s)).unwrap_or_default()
                })
                .collect();
            conditions.push(scored(id(true), &[(None, merged)], &golds)?);
        }
    }
    if missing > 0 {
        return Err(RunError::Incomplete {
            missing,
            expected: config.shot_counts.len() * config.seeds.len() * test.len(),
        });
    }
    Ok(ExperimentReport {
        config_hash: config_hash.to_string(),
        template_version: template_version.to_string(),
        n_test: test.len(),
        n_records: used,
        fallbacks,
        conditions,
        note: ZERO_DIVISION_NOTE.to_string(),
    })
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round2(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Report as JSON with every float rounded to two decimals.
pub fn report_json(report: &ExperimentReport) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    round_floats(&mut v);
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}

pub const CSV_HEADER: [&str; 15] = [
    "dataset",
    "task",
    "shots",
    "self_consistency",
    "model",
    "seed",
    "granularity",
    "tp",
    "n_pred",
    "n_gold",
    "precision",
    "recall",
    "f1",
    "mean_f1",
    "std_f1",
];

pub fn report_csv(report: &ExperimentReport) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Config(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for c in &report.conditions {
        for sr in &c.reports {
            let r = &sr.report;
            let s = c.summary(r.granularity).expect("summary per granularity");
            w.write_record([
                c.condition.dataset.clone(),
                c.condition.task.to_string(),
                c.condition.shots.to_string(),
                c.condition.self_consistency.to_string(),
                c.condition.model.clone(),
                sr.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.granularity.as_str().to_string(),
                r.tp.to_string(),
                r.n_pred.to_string(),
                r.n_gold.to_string(),
                format!("{:.2}", r.precision),
                format!("{:.2}", r.recall),
                format!("{:.2}", r.f1),
                format!("{:.2}", s.mean_f1),
                format!("{:.2}", s.std_f1),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| RunError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_reports(dir: &Path, report: &ExperimentReport) -> Result<(), RunError> {
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| RunError::Io { path, source })
    };
    write(REPORT_JSON, report_json(report))?;
    write(REPORT_CSV, report_csv(report)?)
}

pub fn read_report(dir: &Path) -> Result<ExperimentReport, RunError> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RunError::CorruptRecords {
        path,
        line: 0,
        message: e.to_string(),
    })
}

mod common;

use std::fs;
use std::path::Path;

use absa_harness::gateway::{BackendSpec, ScriptStep, ScriptedBackend};
use absa_harness::metrics::Granularity;
use absa_harness::runner::{self, store, RunError, RECORDS_FILE};
use absa_harness::{run_experiment, Execution, RunConfig, Task};

fn assert_perfect(report: &runner::ExperimentReport) {
    assert!(!report.conditions.is_empty());
    for c in &report.conditions {
        for s in &c.summaries {
            assert_eq!(s.mean_f1, 100.0, "{:?} {:?}", c.condition, s.granularity);
            assert_eq!(s.std_f1, 0.0);
        }
    }
}

#[test]
fn replay_run_scores_perfectly_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path(), Task::Asqp, &[0, 5], &[0, 1, 2], BackendSpec::ReplayGold);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.generated, 2 * 3 * 20);
    assert_eq!(out.exit_code(), 0);
    // Two shot counts, each with and without self-consistency.
    assert_eq!(out.report.conditions.len(), 4);
    assert_perfect(&out.report);
    let sc = out.report.condition(5, true).unwrap();
    assert_eq!(sc.reports.len(), Granularity::all_for(Task::Asqp).len());
    for f in ["manifest.json", "records.jsonl", "reports.json", "reports.csv"] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(cfg.output_dir.join("reports.csv")).unwrap();
    assert!(csv.starts_with("dataset,task,shots,self_consistency,model,seed,granularity,"));
    assert!(csv.contains(",100.00,100.00,100.00,100.00,0.00"));
}

#[test]
fn tasd_run_from_asqp_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path(), Task::Tasd, &[0, 3], &[0, 1], BackendSpec::ReplayGold);
    let out = run_experiment(&cfg).unwrap();
    assert_perfect(&out.report);
    let records = store::load_records(&cfg.output_dir.join(RECORDS_FILE), false).unwrap();
    assert!(records.iter().flat_map(|r| &r.label).all(|t| t.opinion.is_none()));
}

#[test]
fn second_run_into_same_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path(), Task::Asqp, &[0], &[0], BackendSpec::ReplayGold);
    run_experiment(&cfg).unwrap();
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, RunError::AlreadyExists(_)));
    assert_eq!(err.exit_code(), 2);
}

fn sorted(dir: &Path) -> Vec<String> {
    store::sorted_record_lines(&dir.join(RECORDS_FILE)).unwrap()
}

#[test]
fn resume_completes_an_interrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = BackendSpec::Perturb { rate: 0.3, seed: 11 };
    let full = common::config(a.path(), Task::Asqp, &[0, 5], &[0, 1], spec.clone());
    run_experiment(&full).unwrap();

    let part = common::config(b.path(), Task::Asqp, &[0, 5], &[0, 1], spec);
    run_experiment(&part).unwrap();
    let path = part.output_dir.join(RECORDS_FILE);
    let bytes = fs::read(&path).unwrap();
    // Keep roughly a third of the records plus half of the next line.
    let cut = bytes.len() / 3;
    fs::write(&path, &bytes[..cut]).unwrap();
    fs::remove_file(part.output_dir.join("reports.json")).unwrap();

    let resumed = runner::resume(&part.output_dir).unwrap();
    assert!(resumed.reused > 0 && resumed.generated > 0);
    assert_eq!(resumed.reused + resumed.generated, 2 * 2 * 20);
    assert_eq!(sorted(&full.output_dir), sorted(&part.output_dir));
    assert_eq!(
        fs::read_to_string(full.output_dir.join("reports.json")).unwrap(),
        fs::read_to_string(part.output_dir.join("reports.json")).unwrap()
    );

    let again = runner::resume(&part.output_dir).unwrap();
    assert_eq!(again.generated, 0);
}

#[test]
fn resume_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path(), Task::Asqp, &[0], &[0], BackendSpec::ReplayGold);
    run_experiment(&cfg).unwrap();
    let test = dir.path().join("data/test.txt");
    let mut text = fs::read_to_string(&test).unwrap();
    text.push_str("The soup was great .####[['soup', 'food quality', 'positive', 'great']]\n");
    fs::write(&test, text).unwrap();
    let err = runner::resume(&cfg.output_dir).unwrap_err();
    assert!(matches!(err, RunError::HashMismatch { .. }), "{err}");
    assert!(matches!(runner::score(&cfg.output_dir), Err(RunError::HashMismatch { .. })));
}

#[test]
fn score_needs_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(dir.path(), Task::Asqp, &[0], &[0, 1], BackendSpec::ReplayGold);
    run_experiment(&cfg).unwrap();
    let path = cfg.output_dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    assert!(matches!(
        runner::score(&cfg.output_dir),
        Err(RunError::Incomplete { missing: 1, expected: 40 })
    ));
}

#[test]
fn exhausted_examples_fall_back_to_empty_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config(dir.path(), Task::Asqp, &[0], &[0], BackendSpec::ReplayGold);
    cfg.test_limit = Some(3);
    let backend = ScriptedBackend::new(vec![ScriptStep::stop("I cannot find any opinions.")]);
    let out = runner::run_experiment_with_backend(&cfg, &backend, Execution::Sequential).unwrap();
    assert_eq!(out.report.fallbacks, 3);
    assert_eq!(out.exit_code(), runner::EXIT_WITH_FALLBACKS);
    assert_eq!(backend.calls(), 30);
    let records = store::load_records(&cfg.output_dir.join(RECORDS_FILE), false).unwrap();
    for r in &records {
        assert_eq!(r.attempts, 10);
        assert!(!r.valid && r.label.is_empty());
        assert_eq!(r.violations.len(), 10);
    }
    let s = out.report.condition(0, false).unwrap().summary(Granularity::Tuple).unwrap();
    assert_eq!((s.mean_precision, s.mean_recall, s.mean_f1), (0.0, 0.0, 0.0));
}

#[test]
fn scripted_backend_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    fs::write(
        &script,
        r#"{"default": [{"text": "[('pizza', 'food quality', 'positive', 'great')"}]}"#,
    )
    .unwrap();
    let mut cfg = common::config(
        dir.path(),
        Task::Asqp,
        &[0],
        &[0],
        BackendSpec::Scripted { script: script.clone() },
    );
    cfg.test_limit = Some(4);
    let out = run_experiment(&cfg).unwrap();
    // Valid only for sentences mentioning pizza; the rest exhaust.
    let records = store::load_records(&cfg.output_dir.join(RECORDS_FILE), false).unwrap();
    for r in &records {
        assert_eq!(r.valid, r.attempts == 1);
    }
    assert_eq!(out.report.fallbacks, records.iter().filter(|r| !r.valid).count());
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_runs_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = BackendSpec::Perturb { rate: 0.5, seed: 3 };
    let ca = common::config(a.path(), Task::Asqp, &[0, 5], &[0, 1, 2], spec.clone());
    let cb = common::config(b.path(), Task::Asqp, &[0, 5], &[0, 1, 2], spec);
    let test = absa_harness::parse_dataset(&a.path().join("data/test.txt"), Task::Asqp, &common::taxonomy())
        .unwrap()
        .examples;
    let backend = absa_harness::gateway::PerturbBackend::new(&test, 0.5, 3).unwrap();
    let ra = runner::run_experiment_with_backend(&ca, &backend, Execution::Sequential).unwrap();
    let rb = runner::run_experiment_with_backend(&cb, &backend, Execution::Parallel).unwrap();
    assert_eq!(sorted(&ca.output_dir), sorted(&cb.output_dir));
    assert_eq!(ra.report, rb.report);
}

#[test]
fn bundled_sample_config_parses() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let cfg = RunConfig::load(&root.join("configs/sample-replay.toml")).unwrap();
    assert!(cfg.dataset.dir.join("train.txt").exists());
    let inputs = cfg.load_inputs().unwrap();
    assert_eq!(inputs.dataset.test.len(), 50);
    let live = RunConfig::load(&root.join("configs/rest16-live.toml")).unwrap();
    assert!(matches!(live.backend, BackendSpec::Live(_)));
}

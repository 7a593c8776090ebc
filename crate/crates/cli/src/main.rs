use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absa_harness::corpus::{reindex, write_dataset};
use absa_harness::metrics::{Granularity, TestKind};
use absa_harness::runner::{self, report, ExperimentReport, RunError};
use absa_harness::{compare_conditions, parse_dataset, split_dataset, RunConfig, Task, Taxonomy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::{Table, Value};

/// Few-shot LLM evaluation for ASQP and TASD.
#[derive(Parser)]
#[command(name = "absa-eval", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid into a fresh output directory.
    Run(RunArgs),
    /// Continue an interrupted run.
    Resume {
        dir: PathBuf,
        /// Worker threads (not part of the config hash).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rescore stored records and rewrite reports.json / reports.csv.
    Score { dir: PathBuf },
    /// Print condition summaries of one or more runs.
    Report(ReportArgs),
    /// Shuffle and split one annotated file into train/dev/test.
    Split(SplitArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Comma-separated shot counts.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    /// Comma-separated generation seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    sampling_seed: Option<u64>,
    #[arg(long)]
    self_consistency: Option<bool>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    stop_sequence: Option<String>,
    /// Regeneration budget per example.
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    lowercase_shots: Option<bool>,
    #[arg(long)]
    allow_implicit_terms: Option<bool>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    allow_any_shot_count: Option<bool>,
    #[arg(long)]
    workers: Option<usize>,

    #[arg(long)]
    dataset_name: Option<String>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Tuple arity of the dataset files when it differs from the task.
    #[arg(long)]
    dataset_format: Option<Task>,
    #[arg(long)]
    domain: Option<String>,

    /// live, replay_gold, scripted or perturb.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, env = "ABSA_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "ABSA_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Transport attempts per request.
    #[arg(long)]
    request_attempts: Option<u32>,
    #[arg(long)]
    backoff_ms: Option<u64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    forward_seed: Option<bool>,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    perturb_rate: Option<f64>,
    #[arg(long)]
    perturb_seed: Option<u64>,

    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Welch,
    Paired,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories holding reports.json.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long, default_value = "tuple")]
    granularity: String,
    /// Pairwise t-tests between all seed-level conditions, Bonferroni
    /// corrected for the number of pairs.
    #[arg(long)]
    compare: bool,
    #[arg(long, value_enum, default_value = "welch")]
    test: TestArg,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long, default_value = "asqp")]
    task: Task,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// train,test,dev fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.2,0.1")]
    ratios: Vec<f64>,
}

#[derive(Debug)]
enum CliError {
    Run(RunError),
    Usage(String),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) => e.exit_code() as u8,
            CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Run(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

fn set(table: &mut Table, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("config section is a table");
    }
    t.insert(last.to_string(), value);
}

fn path_value(p: &Path) -> Result<Value, CliError> {
    let abs = std::path::absolute(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    Ok(Value::String(abs.to_string_lossy().into_owned()))
}

fn int<T: TryInto<i64>>(v: T) -> Result<Value, CliError> {
    v.try_into()
        .map(Value::Integer)
        .map_err(|_| CliError::Usage("integer flag out of range".into()))
}

fn build_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let (mut table, base) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| RunError::Io {
                path: path.clone(),
                source,
            })?;
            let table: Table = toml::from_str(&text).map_err(|e| RunError::Config(e.to_string()))?;
            (table, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Table::new(), PathBuf::from(".")),
    };
    macro_rules! opt {
        ($field:expr, $path:expr, $conv:expr) => {
            if let Some(v) = &$field {
                set(&mut table, $path, $conv(v)?);
            }
        };
    }
    let s = |v: &String| -> Result<Value, CliError> { Ok(Value::String(v.clone())) };
    let b = |v: &bool| -> Result<Value, CliError> { Ok(Value::Boolean(*v)) };
    let f = |v: &f64| -> Result<Value, CliError> { Ok(Value::Float(*v)) };
    let task = |v: &Task| -> Result<Value, CliError> { Ok(Value::String(v.to_string())) };
    let list = |v: &Vec<u64>| -> Result<Value, CliError> {
        v.iter().map(|x| int(*x)).collect::<Result<Vec<_>, _>>().map(Value::Array)
    };
    let p = |v: &PathBuf| path_value(v);

    opt!(args.task, &["task"], task);
    if let Some(v) = &args.shots {
        set(&mut table, &["shot_counts"], list(&v.iter().map(|&k| k as u64).collect())?);
    }
    opt!(args.seeds, &["seeds"], list);
    opt!(args.sampling_seed, &["sampling_seed"], |v: &u64| int(*v));
    opt!(args.self_consistency, &["self_consistency"], b);
    opt!(args.model, &["model"], s);
    opt!(args.temperature, &["temperature"], f);
    opt!(args.max_tokens, &["max_tokens"], |v: &u32| int(*v));
    opt!(args.stop_sequence, &["stop_sequence"], s);
    opt!(args.max_attempts, &["max_attempts"], |v: &u32| int(*v));
    opt!(args.output_dir, &["output_dir"], p);
    opt!(args.template, &["template"], p);
    opt!(args.lowercase_shots, &["lowercase_shots"], b);
    opt!(args.allow_implicit_terms, &["allow_implicit_terms"], b);
    opt!(args.test_limit, &["test_limit"], |v: &usize| int(*v));
    opt!(args.allow_any_shot_count, &["allow_any_shot_count"], b);
    opt!(args.workers, &["workers"], |v: &usize| int(*v));
    opt!(args.dataset_name, &["dataset", "name"], s);
    opt!(args.dataset_dir, &["dataset", "dir"], p);
    opt!(args.taxonomy, &["dataset", "taxonomy"], p);
    opt!(args.dataset_format, &["dataset", "format"], task);
    opt!(args.domain, &["dataset", "domain"], s);

    if let Some(kind) = &args.backend {
        let kind: absa_harness::gateway::BackendKind = kind.parse().map_err(|e: absa_harness::GatewayError| CliError::Usage(e.to_string()))?;
        let current = table
            .get("backend")
            .and_then(|b| b.get("kind"))
            .and_then(Value::as_str)
            .map(str::to_string);
        if current.as_deref() != Some(&kind.to_string()) {
            table.insert("backend".into(), Value::Table(Table::new()));
        }
        set(&mut table, &["backend", "kind"], Value::String(kind.to_string()));
    }
    let is_live = table
        .get("backend")
        .and_then(|b| b.get("kind"))
        .and_then(Value::as_str)
        == Some("live");
    if is_live {
        // Secrets and endpoint from flags or the environment only apply to
        // the live backend.
        opt!(args.endpoint, &["backend", "endpoint"], s);
        opt!(args.api_key, &["backend", "api_key"], s);
    }
    opt!(args.timeout_secs, &["backend", "timeout_secs"], |v: &u64| int(*v));
    opt!(args.request_attempts, &["backend", "max_attempts"], |v: &u32| int(*v));
    opt!(args.backoff_ms, &["backend", "backoff_ms"], |v: &u64| int(*v));
    opt!(args.max_in_flight, &["backend", "max_in_flight"], |v: &usize| int(*v));
    opt!(args.forward_seed, &["backend", "forward_seed"], b);
    opt!(args.script, &["backend", "script"], p);
    opt!(args.perturb_rate, &["backend", "rate"], f);
    opt!(args.perturb_seed, &["backend", "seed"], |v: &u64| int(*v));

    let mut cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| RunError::Config(e.to_string()))?;
    cfg.resolve_paths(&base);
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(report: &ExperimentReport, granularity: Granularity) {
    println!(
        "{:<12} {:<5} {:>5} {:>3} {:<14} {:>7} {:>6} {:>7} {:>7} {:>5}",
        "dataset", "task", "shots", "sc", "model", "F1", "std", "P", "R", "runs"
    );
    for c in &report.conditions {
        let Some(s) = c.summary(granularity) else { continue };
        println!(
            "{:<12} {:<5} {:>5} {:>3} {:<14} {:>7.2} {:>6.2} {:>7.2} {:>7.2} {:>5}",
            c.condition.dataset,
            c.condition.task.to_string(),
            c.condition.shots,
            if c.condition.self_consistency { "yes" } else { "no" },
            c.condition.model,
            s.mean_f1,
            s.std_f1,
            s.mean_precision,
            s.mean_recall,
            s.per_seed_f1.len()
        );
    }
    if report.fallbacks > 0 {
        println!("{} predictions fell back to the empty label", report.fallbacks);
    }
}

fn parse_granularity(s: &str) -> Result<Granularity, CliError> {
    [
        Granularity::Tuple,
        Granularity::AspectTerm,
        Granularity::OpinionTerm,
        Granularity::Category,
        Granularity::Polarity,
    ]
    .into_iter()
    .find(|g| g.as_str() == s)
    .ok_or_else(|| CliError::Usage(format!("unknown granularity {s:?}")))
}

fn report_cmd(args: &ReportArgs) -> Result<(), CliError> {
    let granularity = parse_granularity(&args.granularity)?;
    let reports = args
        .dirs
        .iter()
        .map(|d| report::read_report(d))
        .collect::<Result<Vec<_>, _>>()?;
    for (dir, r) in args.dirs.iter().zip(&reports) {
        println!("# {}", dir.display());
        print_summary(r, granularity);
        println!();
    }
    if !args.compare {
        return Ok(());
    }
    let kind = match args.test {
        TestArg::Welch => TestKind::Welch,
        TestArg::Paired => TestKind::Paired,
    };
    // Self-consistency conditions have a single merged score and no spread.
    let samples: Vec<(String, Vec<f64>)> = reports
        .iter()
        .flat_map(|r| &r.conditions)
        .filter(|c| !c.condition.self_consistency)
        .filter_map(|c| {
            c.summary(granularity).map(|s| {
                let id = &c.condition;
                (format!("{}/{}/{}-shot/{}", id.dataset, id.task, id.shots, id.model), s.per_seed_f1.clone())
            })
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (i + 1..samples.len()).map(move |j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Usage("need at least two conditions to compare".into()));
    }
    println!("{} comparisons, Bonferroni corrected", pairs.len());
    println!("{:<40} {:<40} {:>8} {:>7} {:>9} {:>9} sig", "a", "b", "t", "df", "p", "p_adj");
    for (i, j) in pairs.iter().copied() {
        let (a, b) = (&samples[i], &samples[j]);
        let c = compare_conditions(&a.1, &b.1, pairs.len(), kind)
            .map_err(|e| CliError::Usage(format!("{} vs {}: {e}", a.0, b.0)))?;
        println!(
            "{:<40} {:<40} {:>8.3} {:>7.2} {:>9.2e} {:>9.2e} {}",
            a.0,
            b.0,
            c.t,
            c.df,
            c.p_raw,
            c.p_adjusted,
            if c.significant { "*" } else { "" }
        );
    }
    Ok(())
}

fn split_cmd(args: &SplitArgs) -> Result<(), CliError> {
    let ratios: [f64; 3] = args
        .ratios
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage("--ratios takes three values".into()))?;
    let taxonomy = Taxonomy::load(&args.taxonomy).map_err(RunError::from)?;
    let parsed = parse_dataset(&args.input, args.task, &taxonomy).map_err(RunError::from)?;
    let (mut train, mut test, mut dev) =
        split_dataset(&parsed.examples, ratios, args.seed).map_err(RunError::from)?;
    fs::create_dir_all(&args.out).map_err(|source| RunError::Io {
        path: args.out.clone(),
        source,
    })?;
    for (name, part) in [("train", &mut train), ("test", &mut test), ("dev", &mut dev)] {
        reindex(part);
        write_dataset(&args.out.join(format!("{name}.txt")), part).map_err(RunError::from)?;
        println!("{name}: {}", part.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(&args)?;
            if args.dry_run {
                println!("{}", toml::to_string(&cfg).map_err(|e| CliError::Usage(e.to_string()))?);
                return Ok(0);
            }
            let out = runner::run_experiment(&cfg)?;
            print_summary(&out.report, Granularity::Tuple);
            println!("wrote {}", out.output_dir.display());
            Ok(out.exit_code() as u8)
        }
        Command::Resume { dir, workers } => {
            let out = match workers {
                None => runner::resume(&dir)?,
                Some(w) => runner::resume_with_workers(&dir, w)?,
            };
            println!("{} records reused, {} generated", out.reused, out.generated);
            print_summary(&out.report, Granularity::Tuple);
            Ok(out.exit_code() as u8)
        }
        Command::Score { dir } => {
            let r = runner::score(&dir)?;
            print_summary(&r, Granularity::Tuple);
            Ok(if r.fallbacks > 0 { runner::EXIT_WITH_FALLBACKS as u8 } else { 0 })
        }
        Command::Report(args) => report_cmd(&args).map(|_| 0),
        Command::Split(args) => split_cmd(&args).map(|_| 0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

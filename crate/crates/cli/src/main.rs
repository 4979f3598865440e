use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icad_core::eval::{detect, render_svg, run_benchmark, write_report, MetricsReport, ScenarioKind};
use icad_core::io::{format_value, load_dataset_dir, load_features_csv, write_corpus};
use icad_core::model::{load_checkpoint, ModelParams};
use icad_core::priors::{corpus_seed, generate_dataset, AnomalyKind, RealRange};
use icad_core::train::pretrain;
use icad_core::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "icad", version, about = "In-context anomaly detection on tabular data")]
struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic datasets as CSV with JSON sidecars.
    Generate(GenerateArgs),
    /// Pretrain a model on the synthetic prior.
    Pretrain,
    /// Score query rows against a context with a pretrained model.
    Detect(DetectArgs),
    /// Run a benchmark scenario over a directory of CSV datasets.
    Bench(BenchArgs),
    /// Render aggregate tables and a chart from a saved report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: AnomalyKind,
    #[arg(long, default_value_t = 25)]
    datasets: usize,
    /// Rows per dataset.
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    /// Smallest anomaly rate for mixture datasets.
    #[arg(long, default_value_t = 0.05)]
    rate_min: f64,
    /// Largest anomaly rate for mixture datasets.
    #[arg(long, default_value_t = 0.25)]
    rate_max: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Context CSV; a label column, if present, is ignored.
    #[arg(long)]
    context: PathBuf,
    /// Query CSV; a label column, if present, is ignored.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Clean,
    Noisy,
    Levelk,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of labelled CSV datasets.
    #[arg(long)]
    datasets: PathBuf,
    /// Required when the method list includes tactic.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Context anomaly level in percent for the level-k scenario.
    #[arg(long)]
    k: Option<f64>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Number of evaluation seeds (0..n).
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `bench`.
    #[arg(long)]
    input: PathBuf,
}

fn parse_kind(s: &str) -> Result<AnomalyKind, String> {
    s.parse::<AnomalyKind>().map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Input(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Outcome {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate(args) => generate(&cfg, args, &cli.out),
        Command::Pretrain => run_pretrain(&cfg, &cli.out),
        Command::Detect(args) => run_detect(&cfg, args, &cli.out),
        Command::Bench(args) => {
            apply_bench_overrides(&mut cfg, args);
            run_bench(&cfg, args, &cli.out)
        }
        Command::Report(args) => run_report(args, &cli.out),
    }
}

fn generate(cfg: &RunConfig, args: &GenerateArgs, out: &Path) -> Outcome {
    cfg.prior.validate()?;
    let rate = RealRange::new(args.rate_min, args.rate_max);
    let datasets = (0..args.datasets)
        .map(|i| {
            let ds = generate_dataset(&cfg.prior, args.kind, args.rows, rate, corpus_seed(cfg.seed, i as u64))?;
            Ok((format!("{}_{i:03}", args.kind.name()), ds))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let written = write_corpus(&datasets, out, &cfg.config_hash())?;
    log::info!("wrote {} datasets to {}", written.len(), out.display());
    Ok(true)
}

#[derive(serde::Serialize)]
struct RunRecord<'a> {
    config_hash: String,
    config: &'a RunConfig,
}

fn write_run_record(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let record = RunRecord {
        config_hash: cfg.config_hash(),
        config: cfg,
    };
    let path = out.join("run.json");
    let body = serde_json::to_vec_pretty(&record).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(&path, body).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run_pretrain(cfg: &RunConfig, out: &Path) -> Outcome {
    cfg.validate()?;
    write_run_record(cfg, out)?;
    let (_, log) = pretrain(&cfg.train_config(), Some(out))?;
    if let Some(loss) = log.smoothed_loss(100) {
        log::info!("final smoothed loss {loss:.4}");
    }
    Ok(true)
}

fn load_params(path: &Path) -> Result<ModelParams<f32>, Failure> {
    Ok(load_checkpoint(path)?)
}

fn run_detect(cfg: &RunConfig, args: &DetectArgs, out: &Path) -> Outcome {
    let params = load_params(&args.checkpoint)?;
    let (context, _) = load_features_csv(&args.context)?;
    let (query, _) = load_features_csv(&args.query)?;
    let prediction = detect(&context, &query, &params, args.threshold)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let hash = cfg.config_hash();
    let mut body = String::from("row,anomaly_probability,label,config_hash\n");
    for (i, (p, l)) in prediction.anomaly_scores().iter().zip(&prediction.labels).enumerate() {
        body.push_str(&format!("{i},{},{l},{hash}\n", format_value(*p)));
    }
    let path = out.join("detections.csv");
    std::fs::write(&path, body).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let flagged = prediction.labels.iter().filter(|&&l| l == 1).count();
    log::info!("{flagged} of {} query rows flagged", prediction.labels.len());
    Ok(true)
}

fn apply_bench_overrides(cfg: &mut RunConfig, args: &BenchArgs) {
    if let Some(kind) = args.scenario {
        cfg.scenario.kind = match kind {
            ScenarioArg::Clean => ScenarioKind::Clean,
            ScenarioArg::Noisy => ScenarioKind::Noisy,
            ScenarioArg::Levelk => ScenarioKind::LevelK,
        };
    }
    if args.k.is_some() {
        cfg.scenario.k_percent = args.k;
    }
    if let Some(methods) = &args.methods {
        cfg.scenario.methods = methods.iter().map(|m| m.trim().to_string()).collect();
    }
    if let Some(n) = args.seeds {
        cfg.scenario.seeds = (0..n).collect();
    }
}

fn run_bench(cfg: &RunConfig, args: &BenchArgs, out: &Path) -> Outcome {
    cfg.scenario.validate()?;
    let params = args.checkpoint.as_deref().map(load_params).transpose()?;
    let datasets = load_dataset_dir(&args.datasets)?;
    let report = run_benchmark(&datasets, &cfg.scenario, params.as_ref(), &cfg.config_hash())?;
    write_report(&report, out)?;
    print!("{}", aggregate_table(&report));
    let failed = report.failed_cells();
    if failed > 0 {
        log::warn!("{failed} cells failed");
    }
    Ok(failed == 0)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn aggregate_table(report: &MetricsReport) -> String {
    let mut s = format!("scenario {} config {}\n", report.scenario.label(), report.config_hash);
    s.push_str(
        "method,cells,failed,mean_aucroc,mean_f1,mean_rank_aucroc,median_rank_aucroc,mean_rank_f1,median_rank_f1\n",
    );
    for a in &report.aggregates {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            a.method,
            a.cells,
            a.failed,
            cell(a.mean_aucroc),
            cell(a.mean_f1),
            cell(a.mean_rank_aucroc),
            cell(a.median_rank_aucroc),
            cell(a.mean_rank_f1),
            cell(a.median_rank_f1)
        ));
    }
    if !report.skipped.is_empty() {
        s.push_str(&format!("skipped: {}\n", report.skipped.join(" ")));
    }
    s
}

fn run_report(args: &ReportArgs, out: &Path) -> Outcome {
    let text =
        std::fs::read_to_string(&args.input).map_err(|e| Failure::Usage(format!("{}: {e}", args.input.display())))?;
    let report: MetricsReport =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.input.display())))?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let table = aggregate_table(&report);
    let write = |name: &str, body: &str| {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    };
    let mut csv: String = table
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("skipped:"))
        .collect::<Vec<_>>()
        .join("\n");
    csv.push('\n');
    write("aggregates.csv", &csv)?;
    write("report.svg", &render_svg(&report))?;
    print!("{table}");
    Ok(report.failed_cells() == 0)
}

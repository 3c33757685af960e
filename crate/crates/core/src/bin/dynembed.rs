//! Command-line driver: dataset conversion, task runs, ablations, studies and
//! grid search. Exit codes: 0 success, 1 configuration error, 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dynembed::config::{RunConfig, KEYS};
use dynembed::data::{self, InputFormat};
use dynembed::evalkit::{self, EvalReport};
use dynembed::{Error, Result};

#[derive(Parser)]
#[command(name = "dynembed", version, about = "Dynamic graph embeddings for streaming recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw dataset to the canonical event CSV.
    Convert {
        /// Input file or directory.
        input: PathBuf,
        /// Output CSV path.
        #[arg(short, long)]
        output: PathBuf,
        /// generic | canonical | movielens-100k | movielens-1m | recbole | jodie
        #[arg(short, long, default_value = "generic")]
        format: String,
        /// Drop items with fewer interactions.
        #[arg(long, default_value_t = 0)]
        min_item_count: usize,
    },
    /// Run the configured task and write its report and stage trace.
    Run(RunArgs),
    /// Evaluate the configured task and write its report.
    Eval(RunArgs),
    /// Run the ablation variants of the configured task.
    Ablate(RunArgs),
    /// Compare restart policies at matched restart counts.
    StudyMonitor(RunArgs),
    /// Correlate the monitor distance with the true approximation error.
    StudyCorrelation(RunArgs),
    /// Sweep the training share and report test accuracy.
    StudyRobustness(RunArgs),
    /// Grid search over a parameter space file.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Space file with lines `key = v1; v2` or `key = lo..hi[:step]`.
        #[arg(long)]
        space: PathBuf,
        /// Report metric to maximise (default: validation MRR or recall).
        #[arg(long)]
        objective: Option<String>,
        /// Parallel worker runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List every configuration key with its default.
    Keys,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key (repeatable): `--set beta=35`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// future-item | next-interaction
    #[arg(long)]
    task: Option<String>,
    /// Dataset path (overrides `dataset`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format (overrides `dataset_format`).
    #[arg(long)]
    format: Option<String>,
    /// Report directory (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Accepted and echoed; runs are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config {
                    key: kv.clone(),
                    message: "expected KEY=VALUE".into(),
                })?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(t) = &self.task {
            cfg.set("task", t)?;
        }
        if let Some(d) = &self.data {
            cfg.set("dataset", &d.display().to_string())?;
        }
        if let Some(f) = &self.format {
            cfg.set("dataset_format", f)?;
        }
        if let Some(o) = &self.output_dir {
            cfg.set("output_dir", &o.display().to_string())?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(cfg: &RunConfig, kind: &str, report: &EvalReport) -> Result<()> {
    let stem = format!("{kind}-{}", &cfg.content_hash()[..12]);
    let path = report.write(&cfg.output_dir, &stem)?;
    for (k, v) in report.metrics.iter().chain(&report.stats) {
        eprintln!("{k:>24} {v:.6}");
    }
    println!("{}", path.display());
    Ok(())
}

fn run_study(args: &RunArgs, kind: &str, f: fn(&RunConfig, &data::Dataset) -> Result<EvalReport>) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = cfg.load_dataset()?;
    let report = f(&cfg, &ds)?;
    emit(&cfg, kind, &report)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert {
            input,
            output,
            format,
            min_item_count,
        } => {
            let fmt: InputFormat = format.parse().map_err(|e: Error| Error::Config {
                key: "format".into(),
                message: e.to_string(),
            })?;
            let mut ds = data::load(&input, fmt)?;
            ds.filter_min_item_count(min_item_count);
            data::save_canonical(&ds, &output)?;
            eprintln!(
                "{} users, {} items, {} interactions",
                ds.user_count(),
                ds.item_count(),
                ds.len()
            );
            println!("{}", output.display());
            Ok(())
        }
        Command::Run(args) => {
            let mut cfg = args.resolve()?;
            cfg.trace = true;
            let ds = cfg.load_dataset()?;
            let report = evalkit::run_task(&cfg, &ds)?;
            emit(&cfg, cfg.task.as_str(), &report)
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let ds = cfg.load_dataset()?;
            let report = evalkit::run_task(&cfg, &ds)?;
            emit(&cfg, cfg.task.as_str(), &report)
        }
        Command::Ablate(args) => run_study(&args, "ablation", evalkit::run_ablation),
        Command::StudyMonitor(args) => run_study(&args, "study-monitor", evalkit::restart_policy_study),
        Command::StudyCorrelation(args) => run_study(&args, "study-correlation", evalkit::correlation_study),
        Command::StudyRobustness(args) => run_study(&args, "study-robustness", evalkit::robustness_study),
        Command::Tune {
            run,
            space,
            objective,
            jobs,
        } => {
            let cfg = run.resolve()?;
            let text = std::fs::read_to_string(&space).map_err(|e| Error::Config {
                key: "space".into(),
                message: format!("{}: {e}", space.display()),
            })?;
            let space = evalkit::parse_space(&text)?;
            let objective = objective.unwrap_or_else(|| default_objective(&cfg));
            let ds = cfg.load_dataset()?;
            let result = evalkit::grid_search(&cfg, &space, &ds, &objective, jobs)?;
            let stem = format!("tune-{}", &cfg.content_hash()[..12]);
            std::fs::create_dir_all(&cfg.output_dir)?;
            let json = cfg.output_dir.join(format!("{stem}.json"));
            let doc = serde_json::json!({ "config": cfg.echo(), "result": result });
            std::fs::write(&json, serde_json::to_string_pretty(&doc).expect("serialisable"))?;
            std::fs::write(cfg.output_dir.join(format!("{stem}-leaderboard.csv")), result.to_csv())?;
            if let Some(best) = result.best() {
                eprintln!("best {objective} = {:.6} at {:?}", best.objective, best.params);
            }
            println!("{}", json.display());
            Ok(())
        }
        Command::Keys => {
            for (k, d, desc) in KEYS {
                println!("{k:<20} {:<18} {desc}", if d.is_empty() { "-" } else { d });
            }
            Ok(())
        }
    }
}

fn default_objective(cfg: &RunConfig) -> String {
    match cfg.task {
        dynembed::config::Task::FutureItem => format!("valid_recall@{}", cfg.top_k),
        dynembed::config::Task::NextInteraction => "valid_mrr".into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use realtrees::data::{binarize, load_csv};
use realtrees::experiment::{report, run_experiment, write_outputs, DatasetSource, ExperimentConfig};
use realtrees::rashomon::{enumerate_rashomon, SearchConfig, DEFAULT_SET_SIZE_CAP};
use realtrees::Error;

const JOBS_ENV: &str = "REALTREES_JOBS";

#[derive(Parser)]
#[command(name = "realtrees", version, about = "Rashomon-set active learning with sparse decision trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every dataset x strategy x seed in a JSON experiment config.
    Run {
        config: PathBuf,
        /// Concurrent runs; REALTREES_JOBS takes precedence when set.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory, overriding the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the Rashomon set of a CSV dataset as TSV.
    Enumerate {
        csv: PathBuf,
        #[arg(long, default_value = "label")]
        label: String,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 16)]
        max_thresholds: usize,
        #[arg(long, default_value_t = DEFAULT_SET_SIZE_CAP)]
        cap: usize,
    },
    /// Recompute aggregate.csv of a result directory.
    Report { dir: PathBuf },
    /// Write a synthetic dataset as CSV, from a JSON source such as
    /// {"xor": {"n": 500, "phi": 0.1, "seed": 1}}.
    Gen {
        spec: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn jobs(flag: Option<usize>) -> Result<usize, Error> {
    if let Ok(v) = std::env::var(JOBS_ENV) {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&j| j > 0)
            .ok_or_else(|| Error::Config(format!("{JOBS_ENV} must be a positive integer, got `{v}`")));
    }
    Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, jobs: flag, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = output {
                cfg.output = out;
            }
            let bundle = run_experiment(&cfg, jobs(flag)?)?;
            write_outputs(&bundle, &cfg.output)?;
            let failed = bundle.failures().count();
            for f in bundle.failures() {
                eprintln!("run failed: {}", f.result.as_ref().unwrap_err());
            }
            eprintln!("{} runs, {} failed, results in {}", bundle.outcomes.len(), failed, cfg.output.display());
            Ok(if failed > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Enumerate { csv, label, depth, lambda, epsilon, max_thresholds, cap } => {
            let raw = load_csv(&csv, &label)?;
            let (ds, _) = binarize(&raw, max_thresholds)?;
            let mut cfg = SearchConfig::new(depth, lambda, epsilon);
            cfg.set_size_cap = cap;
            let set = enumerate_rashomon(&ds, &cfg)?;
            let mut out = io::stdout().lock();
            out.write_all(b"# features: ")?;
            out.write_all(ds.feature_names.join(" ").as_bytes())?;
            out.write_all(b"\n")?;
            out.write_all(set.to_tsv().as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let rows = report(&dir)?;
            eprintln!("{} aggregate rows written to {}", rows.len(), dir.join("aggregate.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { spec, output } => {
            let text = fs::read_to_string(&spec)?;
            let source: DatasetSource = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if matches!(source, DatasetSource::Csv(_)) {
                return Err(Error::Config("gen takes a synthetic source (xor or parity)".into()));
            }
            let ds = source.load()?;
            match output {
                Some(path) => ds.write_csv(fs::File::create(path)?)?,
                None => ds.write_csv(io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Argument parsing and subcommand dispatch.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use obsgrass::{distance, io::read_ssm, Metric};
use obsgrass_harness::RunConfig;

use crate::bench::{bench_distance, bench_sylvester, BenchmarkRecord};
use crate::cl::{default_config, run_cl, write_accuracy_csv, write_artifacts, write_metrics_csv};
use crate::error::{CliError, ExitStatus, Result};
use crate::mc::{run_monte_carlo, MonteCarloConfig, MonteCarloResult, NoiseScale};

/// Environment variable capping worker threads for parallel commands.
pub const THREADS_ENV: &str = "OBSGRASS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "obsgrass", version, about = "Observability-subspace geometry of state-space models")]
pub struct Cli {
    /// Seed for every random draw (cl-run: overrides the stream and training seeds).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files; results go to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time the diagonal Gram closed form against the dense Sylvester solve.
    #[command(after_help = "CSV columns: experiment,params,mean_time_s,std_time_s,iterations,flops\n\
        Exits with status 2 when the diagonal path is under 10x faster at n = 16.")]
    BenchSylvester {
        #[arg(long = "n", value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Time the simplified distance against principal-angle metrics on truncated bases.
    #[command(after_help = "CSV columns: experiment,params,mean_time_s,std_time_s,iterations,flops\n\
        Exits with status 2 unless the simplified distance is the fastest.")]
    BenchDistance {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
    /// Correlate perturbation size with the rank-one subspace cosine.
    #[command(after_help = "CSV columns: mean_pearson,std_pearson,mean_pvalue,std_pvalue,iterations,degenerate\n\
        Worker threads are capped by OBSGRASS_THREADS (default: all cores).")]
    McValidate {
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Number of noise levels i = 0..levels.
        #[arg(long, default_value_t = 100)]
        levels: usize,
        /// Level i has noise parameter i / divisor.
        #[arg(long, default_value_t = 25.0)]
        divisor: f64,
        /// Whether the noise parameter is the standard deviation or the variance.
        #[arg(long, default_value_t = NoiseScale::Std)]
        noise_scale: NoiseScale,
    },
    /// Distance between the SSMs stored in two JSON documents.
    #[command(after_help = "Prints the value with 12 significant digits.\n\
        Exit status 1: unreadable input or mismatched dimensions; 3: ill-conditioned Gram.")]
    Distance {
        file1: PathBuf,
        file2: PathBuf,
        /// chordal, simplified, binet_cauchy, fubini_study, martin or geodesic
        #[arg(long, default_value = "chordal")]
        metric: String,
    },
    /// Train on a synthetic task stream and report accuracies and forgetting.
    #[command(after_help = "CSV tables: accuracy (task_k,task_j,acc), metrics (k,AA,AIA,FM), \
        ckd (state,layer,task,ckd).\n\
        Without a config file the bundled Inf-SSM configuration is used.")]
    ClRun {
        config: Option<PathBuf>,
        /// Skip the state-drift analysis.
        #[arg(long)]
        no_ckd: bool,
    },
}

/// Parses `OBSGRASS_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Sends output to `<out>/<name>` when an output directory is set, else stdout.
fn sink(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Box::new(fs::File::create(dir.join(name))?))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn emit_records(cli: &Cli, name: &str, records: &[BenchmarkRecord]) -> Result<()> {
    match cli.format {
        Format::Json => {
            let mut w = sink(cli.out.as_deref(), &format!("{name}.json"))?;
            writeln!(w, "{}", serde_json::to_string_pretty(records)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(cli.out.as_deref(), &format!("{name}.csv"))?);
            w.write_record(BenchmarkRecord::CSV_HEADER)?;
            for r in records {
                w.write_record(r.csv_row())?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn emit_monte_carlo(cli: &Cli, r: &MonteCarloResult) -> Result<()> {
    match cli.format {
        Format::Json => {
            let mut w = sink(cli.out.as_deref(), "mc_validate.json")?;
            writeln!(w, "{}", serde_json::to_string_pretty(r)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(cli.out.as_deref(), "mc_validate.csv")?);
            w.write_record(MonteCarloResult::CSV_HEADER)?;
            w.write_record([
                r.mean_pearson.to_string(),
                r.std_pearson.to_string(),
                r.mean_pvalue.to_string(),
                r.std_pvalue.to_string(),
                r.iterations.to_string(),
                r.degenerate.to_string(),
            ])?;
            w.flush()?;
        }
    }
    Ok(())
}

/// `value` with 12 significant digits.
pub fn format_distance(value: f64) -> String {
    if value.is_infinite() {
        return "inf".into();
    }
    format!("{value:.11e}")
}

fn cmd_distance(cli: &Cli, file1: &Path, file2: &Path, metric: &str) -> Result<()> {
    let metric: Metric = metric.parse()?;
    let s1 = read_ssm(file1)?;
    let s2 = read_ssm(file2)?;
    let value = match distance(&s1, &s2, metric) {
        Ok(d) => d.value,
        Err(obsgrass::Error::InfiniteDistance) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };
    let mut w = io::stdout().lock();
    match cli.format {
        Format::Csv => writeln!(w, "{}", format_distance(value))?,
        Format::Json => writeln!(
            w,
            "{}",
            serde_json::json!({ "metric": metric.name(), "value": format_distance(value) })
        )?,
    }
    Ok(())
}

fn cmd_cl_run(cli: &Cli, config: Option<&Path>, no_ckd: bool) -> Result<()> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.reseeded(seed);
    }
    let report = run_cl(&cfg, !no_ckd)?;
    match (&cli.out, cli.format) {
        (Some(dir), format) => write_artifacts(dir, &report, format == Format::Json)?,
        (None, Format::Json) => println!("{}", serde_json::to_string_pretty(&report)?),
        (None, Format::Csv) => {
            let mut w = io::stdout().lock();
            write_accuracy_csv(&mut w, &report.accuracy)?;
            writeln!(w)?;
            write_metrics_csv(&mut w, &report.metrics)?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::BenchSylvester { n_values, iterations } => {
            let bench = bench_sylvester(n_values, *iterations, seed)?;
            emit_records(cli, "bench_sylvester", &bench.records)?;
            for (n, r) in &bench.speedups {
                eprintln!("n = {n}: dense / diagonal wall time = {r:.1}");
            }
            bench.check()
        }
        Command::BenchDistance { n, iterations } => {
            let bench = bench_distance(*n, *iterations, seed)?;
            emit_records(cli, "bench_distance", &bench.records)?;
            bench.check()
        }
        Command::McValidate { iterations, n, levels, divisor, noise_scale } => {
            let cfg = MonteCarloConfig::linear(*iterations, *n, *levels, *divisor, *noise_scale, seed);
            let result = run_monte_carlo(&cfg, threads_from_env()?)?;
            emit_monte_carlo(cli, &result)
        }
        Command::Distance { file1, file2, metric } => cmd_distance(cli, file1, file2, metric),
        Command::ClRun { config, no_ckd } => cmd_cl_run(cli, config.as_deref(), *no_ckd),
    }
}

/// Runs the command line and maps the outcome to an exit status.
pub fn main_with(cli: &Cli) -> ExitStatus {
    match run(cli) {
        Ok(()) => ExitStatus::Success,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.hint() {
                eprintln!("{h}");
            }
            e.status()
        }
    }
}

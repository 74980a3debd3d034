use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nichecma::bench::{dump_problem, instantiate_problem, ProblemSpec};
use nichecma::harness::{self, HarnessError, RunConfig};

/// Multimodal CMA-ES with niching: single runs, suites, problem dumps and
/// reports.
#[derive(Parser)]
#[command(name = "nichecma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one problem instance and print its record.
    Run(RunArgs),
    /// Run the problems × dims × instances matrix and write a CSV.
    Suite(SuiteArgs),
    /// Write a generated problem instance to a file.
    Gen(GenArgs),
    /// Aggregate a results CSV into per-problem/per-dim means.
    Report(ReportArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed; the NICHECMA_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SeedArg {
    fn resolve(&self) -> Result<u64, String> {
        match std::env::var("NICHECMA_SEED") {
            Ok(s) => s.trim().parse().map_err(|_| format!("NICHECMA_SEED is not a 64-bit integer: {s:?}")),
            Err(_) => Ok(self.seed),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    problem: u32,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    instance: u32,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = 50_000)]
    budget_multiplier: usize,
    #[arg(long, default_value_t = 2.0)]
    sigma0: f64,
    /// Population size (default 10 × dim).
    #[arg(long)]
    lambda: Option<usize>,
    /// Write the record as a one-row CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the convergence trace (TSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2, 5, 10, 20])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 15)]
    instances: u32,
    #[arg(long, value_delimiter = ',', default_values_t = 1..=16)]
    problems: Vec<u32>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = 50_000)]
    budget_multiplier: usize,
    #[arg(long, default_value_t = 2.0)]
    sigma0: f64,
    /// Directory for results.csv and, with --traces, per-run traces.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Concurrent runs (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write one trace file per run under <out-dir>/traces.
    #[arg(long)]
    traces: bool,
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    problem: u32,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    instance: u32,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV written by `run` or `suite`.
    csv: PathBuf,
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(args: RunArgs) -> Result<(), String> {
    let config = RunConfig {
        budget_multiplier: args.budget_multiplier,
        dims: vec![args.dim],
        instances: 1,
        problems: vec![args.problem],
        master_seed: args.seed.resolve()?,
        sigma0: args.sigma0,
        lambda_override: args.lambda,
        trace_every: args.trace_every,
        ..RunConfig::default()
    };
    let spec = ProblemSpec::new(args.problem, args.dim, args.instance).map_err(|e| e.to_string())?;
    let out = harness::run_single_traced(&spec, &config).map_err(|e| e.to_string())?;
    let mut record = out.record;
    if let Some(path) = &args.trace {
        harness::emit_trace(&out.trace, path).map_err(|e| e.to_string())?;
        record.trace_path = Some(path.clone());
    }
    let csv = harness::csv_string(std::slice::from_ref(&record));
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    let m = &record.metrics;
    eprintln!(
        "problem {} dim {} instance {}: f_best {:.10} f* {} eps_f {:.3e} precision {:.3} recall {:.3} f1 {:.3} restarts {} evals {}",
        record.problem_id,
        record.dim,
        record.instance,
        record.f_best,
        record.f_star,
        m.epsilon_f,
        m.precision,
        m.recall,
        m.f1,
        record.restarts,
        m.evals_used
    );
    Ok(())
}

fn suite(args: SuiteArgs) -> Result<(), String> {
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let config = RunConfig {
        budget_multiplier: args.budget_multiplier,
        dims: args.dims,
        instances: args.instances,
        problems: args.problems,
        master_seed: args.seed.resolve()?,
        sigma0: args.sigma0,
        trace_every: args.trace_every,
        jobs,
        trace_dir: args.traces.then(|| args.out_dir.join("traces")),
        ..RunConfig::default()
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| format!("{}: {e}", args.out_dir.display()))?;
    let records = harness::run_suite(&config).map_err(|e| e.to_string())?;
    let path = args.out_dir.join("results.csv");
    harness::emit_csv(&records, &path).map_err(|e| e.to_string())?;
    let failed: Vec<_> = records.iter().filter_map(|r| r.error.as_ref().map(|e| (r, e))).collect();
    for (r, e) in &failed {
        eprintln!("problem {} dim {} instance {} failed: {e}", r.problem_id, r.dim, r.instance);
    }
    eprintln!("{} records written to {}", records.len(), path.display());
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), String> {
    let spec = ProblemSpec::new(args.problem, args.dim, args.instance).map_err(|e| e.to_string())?;
    let problem = instantiate_problem(&spec, args.seed.resolve()?).map_err(|e| e.to_string())?;
    write_file(&args.out, &dump_problem(&problem))
}

fn report(args: ReportArgs) -> Result<(), String> {
    let rows = harness::read_csv(&args.csv).map_err(|e: HarnessError| e.to_string())?;
    let summary = harness::aggregate(&rows).map_err(|e| e.to_string())?;
    print!("{}", harness::report_string(&summary));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Suite(a) => suite(a),
        Command::Gen(a) => gen(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

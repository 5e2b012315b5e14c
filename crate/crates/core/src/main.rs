use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asgdlab::harness::{fit_rate, run_experiment, ExperimentKind, Format, RunOptions};
use asgdlab::{Error, Result};

#[derive(Parser)]
#[command(name = "asgdlab", version, about = "Asynchronous SGD convergence laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form constants, regime, rates and the decay certificate.
    Analyze(RunArgs),
    /// Sample a staleness trace and fit the geometric law.
    SampleStaleness(RunArgs),
    /// Ensemble of ASGD runs.
    SimAsgd(RunArgs),
    /// Ensemble of modified-equation paths and their stationary variances.
    SimSme(RunArgs),
    /// Hermite–Galerkin solve of the kinetic equation.
    SolvePde(RunArgs),
    /// Fit an exponential decay rate to a CSV column.
    FitRate(FitArgs),
    /// Per-step decay exponent across learning rates.
    SweepThreshold(RunArgs),
    /// ASGD against SGD time-to-target over a worker and staleness grid.
    Speedup(RunArgs),
    /// ASGD ensemble against the modified equation at matched times.
    Compare(RunArgs),
    /// Run whichever experiment the config's "kind" names.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Seed; required for simulation kinds unless set in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output_dir, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "t")]
    t_column: String,
    #[arg(long)]
    y_column: String,
    #[arg(long)]
    t_lo: Option<f64>,
    #[arg(long)]
    t_hi: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = match cli.command {
        Command::FitRate(a) => return fit(a),
        Command::Analyze(a) => (Some(ExperimentKind::Analyze), a),
        Command::SampleStaleness(a) => (Some(ExperimentKind::SampleStaleness), a),
        Command::SimAsgd(a) => (Some(ExperimentKind::SimAsgd), a),
        Command::SimSme(a) => (Some(ExperimentKind::SimSme), a),
        Command::SolvePde(a) => (Some(ExperimentKind::SolvePde), a),
        Command::SweepThreshold(a) => (Some(ExperimentKind::SweepThreshold), a),
        Command::Speedup(a) => (Some(ExperimentKind::Speedup), a),
        Command::Compare(a) => (Some(ExperimentKind::Compare), a),
        Command::Run(a) => (None, a),
    };
    let opts = RunOptions {
        kind,
        seed: args.seed,
        out: args.out,
        format: args.format,
    };
    let outcome = run_experiment(&args.config, &opts)?;
    for line in outcome.summary() {
        println!("{line}");
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let mut rdr = csv::Reader::from_path(&a.input)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found in {}", a.input.display())))
    };
    let (it, iy) = (col(&a.t_column)?, col(&a.y_column)?);
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {:?}: {e}", &rec[i])))
        };
        t.push(parse(it)?);
        y.push(parse(iy)?);
    }
    let window = (a.t_lo.unwrap_or(f64::NEG_INFINITY), a.t_hi.unwrap_or(f64::INFINITY));
    let f = fit_rate(&t, &y, Some(window))?;
    println!("{}", serde_json::to_string_pretty(&f)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

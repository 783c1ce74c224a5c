use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vfp_core::coordinator::{allocate_once, clear_transmission, compare_configurations, run_hierarchical};
use vfp_core::error::{CoordinatorError, TransmissionError};
use vfp_core::report::{build_report, manifest, read_manifest, trace_csv, write_file, write_manifest, write_report};
use vfp_core::scenario::{parse_scenario, validate_scenario, Scenario, WeightsVariant};
use vfp_core::EquilibriumResult;

#[derive(Parser)]
#[command(
    name = "vfp",
    version,
    about = "Electricity and carbon sharing equilibria for virtual federated prosumers"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a scenario without solving it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve the full two-level equilibrium.
    Run {
        #[command(flatten)]
        io: RunArgs,
        /// Also solve the sharing-only and no-sharing configurations.
        #[arg(long)]
        compare: bool,
    },
    /// Clear the transmission level once at nominal energies.
    ClearTransmission {
        #[command(flatten)]
        io: RunArgs,
    },
    /// Clear the transmission level once and allocate each budget.
    Allocate {
        #[command(flatten)]
        io: RunArgs,
    },
    /// Summarize a finished run from its output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Outer budget tolerance.
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long, value_enum)]
    weights_variant: Option<Variant>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Literal,
    Proportional,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
        }
    }
}

fn load(path: &Path) -> Result<(Scenario, Vec<u8>), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let text =
        String::from_utf8(bytes.clone()).map_err(|_| Failure::Input(format!("{} is not UTF-8", path.display())))?;
    let scenario = parse_scenario(&text).map_err(|e| Failure::Input(e.to_string()))?;
    Ok((scenario, bytes))
}

fn load_with_overrides(args: &RunArgs) -> Result<(Scenario, Vec<u8>), Failure> {
    let (mut s, bytes) = load(&args.scenario)?;
    if let Some(t) = args.tol {
        s.algorithm.tol_outer = t;
    }
    if let Some(m) = args.max_outer {
        s.algorithm.max_outer = m;
    }
    if let Some(v) = args.weights_variant {
        s.algorithm.weights_variant = match v {
            Variant::Literal => WeightsVariant::Literal,
            Variant::Proportional => WeightsVariant::Proportional,
        };
    }
    Ok((s, bytes))
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn emit(
    args: &RunArgs,
    scenario: &Scenario,
    bytes: &[u8],
    result: &EquilibriumResult,
    converged: bool,
    compare: bool,
    started: Instant,
) -> Result<(), Failure> {
    let comparison = if compare && converged {
        Some(compare_configurations(scenario).map_err(|e| Failure::Runtime(format!("comparison failed: {e}")))?)
    } else {
        None
    };
    let report = build_report(result, comparison.as_deref());
    write_report(&args.out, &report).map_err(io_failure)?;
    let m = manifest(
        scenario,
        bytes,
        result,
        converged,
        &report,
        started.elapsed().as_secs_f64(),
    );
    write_manifest(&args.out, &m).map_err(io_failure)?;
    println!(
        "{}: {} outer, {} transmission, {} allocation iterations; results in {}",
        m.status,
        m.outer_iterations,
        m.fra_iterations,
        m.dfaa_iterations,
        args.out.display()
    );
    Ok(())
}

fn solve(
    args: &RunArgs,
    compare: bool,
    solver: fn(&Scenario) -> Result<EquilibriumResult, CoordinatorError>,
) -> Result<(), Failure> {
    let started = Instant::now();
    let (scenario, bytes) = load_with_overrides(args)?;
    match solver(&scenario) {
        Ok(result) => emit(args, &scenario, &bytes, &result, true, compare, started),
        Err(CoordinatorError::NotConverged { partial, .. }) => {
            let msg = "outer loop did not converge; partial results written".to_string();
            emit(args, &scenario, &bytes, &partial, false, false, started)?;
            Err(Failure::Runtime(msg))
        }
        Err(CoordinatorError::Precondition(msg)) => Err(Failure::Input(format!("precondition failed: {}", msg.trim()))),
        Err(e @ CoordinatorError::Transmission { .. }) => {
            if let CoordinatorError::Transmission {
                source: TransmissionError::NotConverged { trace, .. },
                ..
            } = &e
            {
                write_file(&args.out.join("fra_trace.csv"), &trace_csv(trace)).map_err(io_failure)?;
            }
            Err(Failure::Runtime(e.to_string()))
        }
        Err(e) => Err(Failure::Runtime(e.to_string())),
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let (s, _) = load(path)?;
    let report = validate_scenario(&s);
    if !report.is_empty() {
        return Err(Failure::Input(format!("scenario is not admissible:\n{report}")));
    }
    println!(
        "ok: {} buses, {} lines, {} VFPs, {} agents, {} periods",
        s.network.buses.len(),
        s.network.lines.len(),
        s.vfp.len(),
        s.agent.len(),
        s.periods()
    );
    Ok(())
}

fn summarize(out: &Path) -> Result<(), Failure> {
    let path = out.join("manifest.json");
    let m = read_manifest(&path).map_err(|e| Failure::Input(e.to_string()))?;
    println!("status            {}", m.status);
    println!("scenario sha256   {}", m.scenario_sha256);
    println!("outer iterations  {}", m.outer_iterations);
    println!("FRA iterations    {}", m.fra_iterations);
    println!("DFAA iterations   {}", m.dfaa_iterations);
    println!("wall time         {:.3} s", m.wall_time_s);
    let r = &m.residuals;
    println!("residuals");
    println!("  transmission    {:.3e}", r.transmission_change);
    println!("  line overflow   {:.3e}", r.line_violation);
    println!("  pool balance    {:.3e}", r.pool_balance);
    println!("  allocation      {:.3e}", r.allocation_balance);
    println!("  outer change    {:.3e}", r.outer_change);
    println!("files             {}", m.files.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Validate { scenario } => validate(scenario),
        Command::Run { io, compare } => solve(io, *compare, run_hierarchical),
        Command::ClearTransmission { io } => solve(io, false, clear_transmission),
        Command::Allocate { io } => solve(io, false, allocate_once),
        Command::Report { out } => summarize(out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

//! `nchv`: command-line front end for family generation, measurement
//! simulation, truth-function checks and exact PO snapping.
//!
//! Exit codes: 0 success, 2 no candidate within precision, 3 precision
//! error, 4 validation (including bad arguments and unreadable files).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;

use nchv_core::basisfamily::{generate_family, BasisFamily, FamilyParams, DEFAULT_FLOOR};
use nchv_core::kscheck::{check_fullness, find_truth_functions, Fixture, ProblemConfig};
use nchv_core::pba::PartialBooleanAlgebra;
use nchv_core::povmfamily::{snap_resolution, ExactConfig, ResolutionRegistry, DEFAULT_DENOMINATOR_CAP};
use nchv_core::simulator::{run_povm_trials, run_pvm_trials, MeasurementRequest, TrialOptions};
use nchv_core::{ComplexOperator, DensityOperator, Error, HermitianObservable};

#[derive(Parser)]
#[command(name = "nchv", version, about = "Non-contextual hidden-variable models for finite-precision measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Basis families.
    Family {
        #[command(subcommand)]
        action: FamilyAction,
    },
    /// Simulate finite-precision measurements.
    Simulate {
        #[command(subcommand)]
        kind: SimulateKind,
    },
    /// Search for truth functions on a fixture.
    Kscheck {
        #[arg(long)]
        fixture: PathBuf,
        /// Stop after this many truth functions.
        #[arg(long, default_value_t = 1000)]
        enumerate_limit: usize,
        /// Close a projective fixture under complements and compatible products.
        #[arg(long)]
        auto_close: bool,
    },
    /// Exact positive-operator resolutions.
    Povm {
        #[command(subcommand)]
        action: PovmAction,
    },
}

#[derive(Subcommand)]
enum FamilyAction {
    /// Generate a totally incompatible basis family.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        net_bound: f64,
        #[arg(long, default_value_t = DEFAULT_FLOOR)]
        floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrialArgs {
    /// Density operator (operator JSON).
    #[arg(long)]
    state: PathBuf,
    /// Target observable (operator JSON) or resolution (array of operators).
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed_app: u64,
    #[arg(long, default_value_t = 0)]
    seed_sys: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    report: ReportFormat,
    /// Realize the apparatus once and reuse it for every trial.
    #[arg(long)]
    fixed_apparatus: bool,
}

#[derive(Subcommand)]
enum SimulateKind {
    /// Projective measurement against a basis family.
    Pvm {
        #[arg(long)]
        family: PathBuf,
        #[command(flatten)]
        trial: TrialArgs,
    },
    /// Positive-operator measurement against a registry (created if absent,
    /// updated in place).
    Povm {
        #[arg(long)]
        registry: PathBuf,
        #[command(flatten)]
        trial: TrialArgs,
    },
}

#[derive(Subcommand)]
enum PovmAction {
    /// Snap a floating resolution to an exact admissible one.
    Snap {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DENOMINATOR_CAP)]
        denominator_cap: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Family {
            action:
                FamilyAction::Gen {
                    n,
                    count,
                    seed,
                    net_bound,
                    floor,
                    out,
                },
        } => {
            let family = generate_family(&FamilyParams {
                n,
                count,
                seed,
                net_bound,
                floor,
            })?;
            write_json(&out, &family)?;
            let max_displacement = family
                .members
                .iter()
                .map(|m| m.provenance.displacement)
                .fold(0.0, f64::max);
            print_json(&json!({
                "n": n,
                "count": family.len(),
                "seed": seed,
                "net_bound": net_bound,
                "floor": floor,
                "replacements": family.members.iter().map(|m| m.provenance.replacements).sum::<usize>(),
                "max_displacement": max_displacement,
                "out": out,
            }));
        }
        Command::Simulate { kind } => {
            let (trial, report) = match kind {
                SimulateKind::Pvm { family, trial } => {
                    let family: BasisFamily = read_json(&family)?;
                    let pba = PartialBooleanAlgebra::from_family(&family)?;
                    let state = DensityOperator::new(read_json(&trial.state)?)?;
                    let target = HermitianObservable::new(read_json(&trial.target)?)?;
                    let request = MeasurementRequest::pvm(target, trial.eps, trial.seed_app, trial.seed_sys)?;
                    let options = TrialOptions {
                        fixed_apparatus: trial.fixed_apparatus,
                    };
                    let report = run_pvm_trials(&request, &state, trial.trials, &family, &pba, options)?;
                    (trial, report)
                }
                SimulateKind::Povm { registry, trial } => {
                    let mut reg: ResolutionRegistry = if registry.exists() {
                        read_json(&registry)?
                    } else {
                        ResolutionRegistry::new()
                    };
                    let state = DensityOperator::new(read_json(&trial.state)?)?;
                    let targets: Vec<ComplexOperator> = read_json(&trial.target)?;
                    let request = MeasurementRequest::povm(targets, trial.eps, trial.seed_app, trial.seed_sys)?;
                    let options = TrialOptions {
                        fixed_apparatus: trial.fixed_apparatus,
                    };
                    let report =
                        run_povm_trials(&request, &state, trial.trials, &mut reg, &ExactConfig::default(), options)?;
                    write_json(&registry, &reg)?;
                    (trial, report)
                }
            };
            match trial.report {
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                ReportFormat::Csv => print!("{}", report.to_csv()),
            }
        }
        Command::Kscheck {
            fixture,
            enumerate_limit,
            auto_close,
        } => {
            let problem = Fixture::load(&fixture)?.into_problem(auto_close, &ProblemConfig::default())?;
            let outcome = find_truth_functions(&problem, enumerate_limit);
            let fullness = if outcome.solutions.is_empty() {
                None
            } else {
                Some(check_fullness(&problem, &outcome.solutions)?)
            };
            print_json(&json!({
                "dim": problem.dim(),
                "universe": problem.universe().len(),
                "resolutions": problem.resolutions().len(),
                "solutions": outcome.solutions.len(),
                "exhausted": outcome.exhausted,
                "colorable": !outcome.solutions.is_empty(),
                "full": fullness.as_ref().map(|f| f.full),
                "undistinguished": fullness.map(|f| f.undistinguished.len()),
                "nodes": outcome.nodes,
                "assignments": outcome.solutions.iter().map(|s| {
                    s.assignment.iter().map(|&b| u8::from(b)).collect::<Vec<_>>()
                }).collect::<Vec<_>>(),
            }));
        }
        Command::Povm {
            action:
                PovmAction::Snap {
                    targets,
                    eps,
                    out,
                    denominator_cap,
                },
        } => {
            let targets: Vec<ComplexOperator> = read_json(&targets)?;
            let snap = snap_resolution(&targets, eps, &ExactConfig { denominator_cap })?;
            write_json(&out, &snap.resolution)?;
            print_json(&json!({
                "k": snap.resolution.len(),
                "dim": snap.resolution.dim(),
                "eps": eps,
                "r": snap.r_f64(),
                "delta": snap.delta_f64(),
                "h_deviation": snap.h_deviation,
                "max_deviation": snap.max_deviation,
                "max_denominator": snap.resolution.members().iter().map(|m| m.max_denominator()).max().map(|d| d.to_string()),
                "out": out,
            }));
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NoCandidate { .. } => 2,
        Error::Precision(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

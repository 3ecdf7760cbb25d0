//! Command-line interface: simulate a system, run a batch experiment,
//! compile a counter machine, or validate an artifact file.
//!
//! Exit codes: 0 success, 1 validation or safety failure, 2 usage error
//! (the usage message names the offending flag).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use cbm_core::cm;
use cbm_core::engine::{run, StopCondition, StopReason, Trace};

use crate::experiments::{run_experiment, write_summary, SummaryFormat};
use crate::formats::{self, AnyFile, ExperimentSpec, SystemFile};

#[derive(Parser)]
#[command(name = "cbm", version, about = "Cellular bioelectric model simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a system file and print how the run stopped.
    Run(RunArgs),
    /// Run an experiment spec and write summary.csv and summary.json.
    Experiment(ExperimentArgs),
    /// Compile a counter-machine file into a runnable system file.
    CompileCm(CompileCmArgs),
    /// Check a system, graph, counter-machine, or experiment file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// System file (JSON, kind "system").
    config: PathBuf,
    /// Decider seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round budget.
    #[arg(long, default_value_t = 1_000)]
    max_rounds: u64,
    /// Stop at the first expression of this label instead of running out
    /// the budget.
    #[arg(long)]
    until: Option<String>,
    /// Stop at the first expression of any label.
    #[arg(long, conflicts_with = "until")]
    any_expression: bool,
    /// Write the full run as JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec file (JSON, kind "experiment").
    spec: PathBuf,
    /// Output directory for summary tables.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompileCmArgs {
    /// Counter-machine file (JSON, kind "cm").
    machine: PathBuf,
    /// Override counter 1's initial value (the unary input).
    #[arg(long)]
    counter1: Option<u64>,
    /// Destination system file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Any artifact file (system, graph, cm, or experiment).
    file: PathBuf,
}

/// Parses `argv` and runs the command, mapping errors to exit code 1.
/// Usage errors exit with code 2 inside `clap`.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run_command(&args),
        Command::Experiment(args) => experiment_command(&args),
        Command::CompileCm(args) => compile_cm_command(&args),
        Command::Validate(args) => validate_command(&args),
    }
}

fn read_system(path: &PathBuf) -> Result<SystemFile> {
    match formats::read_file(path)? {
        AnyFile::System(sys) => Ok(sys),
        other => bail!(
            "{} is a {} file, expected kind \"system\"",
            path.display(),
            file_kind(&other)
        ),
    }
}

fn file_kind(file: &AnyFile) -> &'static str {
    match file {
        AnyFile::System(_) => "system",
        AnyFile::Graph(_) => "graph",
        AnyFile::Cm(_) => "cm",
        AnyFile::Experiment(_) => "experiment",
    }
}

fn run_command(args: &RunArgs) -> Result<()> {
    let sys = read_system(&args.config)?;
    let config = sys.to_config()?;
    let stop = if args.any_expression {
        StopCondition::AnyExpression
    } else if let Some(label) = &args.until {
        StopCondition::FirstExpression(label.clone())
    } else {
        StopCondition::RoundBudget
    };
    let trace = run(&config, args.seed, args.max_rounds, &stop);
    if let Some(path) = &args.trace {
        let layout = sys.cm_layout.as_ref().map(|dto| dto.to_layout());
        let writer = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        formats::write_trace(&trace, layout.as_ref(), writer)?;
    }
    print_trace_summary(&trace);
    Ok(())
}

fn print_trace_summary(trace: &Trace) {
    for report in &trace.reports {
        for record in &report.expressions {
            println!(
                "round {}: vertex {} expressed \"{}\"",
                report.round, record.vertex, record.label
            );
        }
    }
    let stopped = match &trace.stop_reason {
        StopReason::BudgetExhausted => String::from("round budget exhausted"),
        StopReason::Expressed { label, round } => {
            format!("\"{label}\" expressed in round {round}")
        }
        StopReason::AllInactive { round } => {
            format!("all cells inactive after round {round}")
        }
        StopReason::StatusesFixed { round } => {
            format!("statuses fixed since round {round}")
        }
    };
    println!(
        "stopped: {stopped} ({} rounds simulated)",
        trace.reports.len()
    );
}

fn experiment_command(args: &ExperimentArgs) -> Result<()> {
    let spec = match formats::read_file(&args.spec)? {
        AnyFile::Experiment(file) => file.spec,
        other => bail!(
            "{} is a {} file, expected kind \"experiment\"",
            args.spec.display(),
            file_kind(&other)
        ),
    };
    let rows: Vec<_> = run_experiment(&spec)?
        .iter()
        .map(|outcome| outcome.summarize())
        .collect();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (name, format) in [
        ("summary.csv", SummaryFormat::Csv),
        ("summary.json", SummaryFormat::Json),
    ] {
        let path = args.out.join(name);
        let mut writer = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_summary(&rows, &mut writer, format)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn well_formed(machine: &cm::CounterMachine) -> Result<cm::WellFormedCm> {
    let expanded = cm::expand_wildcards(machine)
        .map_err(|v| anyhow::anyhow!("machine is not well formed: {v}"))?;
    cm::validate_well_formed(&expanded).map_err(|violations| {
        anyhow::anyhow!(
            "machine is not well formed: {}",
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )
    })
}

fn compile_cm_command(args: &CompileCmArgs) -> Result<()> {
    let file = match formats::read_file(&args.machine)? {
        AnyFile::Cm(file) => file,
        other => bail!(
            "{} is a {} file, expected kind \"cm\"",
            args.machine.display(),
            file_kind(&other)
        ),
    };
    let mut machine = file.to_machine()?;
    if let Some(value) = args.counter1 {
        ensure!(
            !machine.counters.is_empty(),
            "--counter1 given but the machine declares no counters"
        );
        machine.counters[0] = value;
    }
    let wf = well_formed(&machine)?;
    let compiled = cm::compile(&wf);
    let sys = SystemFile::from_config(&compiled.config, Some(&compiled.layout));
    formats::write_json(&AnyFile::System(sys), &args.out)?;
    println!(
        "wrote {} ({} cells: {} counters, {} states, {} transitions)",
        args.out.display(),
        compiled.layout.total_cells(),
        compiled.layout.counter_cells.len(),
        compiled.layout.state_cells.len(),
        compiled.layout.transition_cells.len(),
    );
    Ok(())
}

fn validate_command(args: &ValidateArgs) -> Result<()> {
    let description = match formats::read_file(&args.file)? {
        AnyFile::System(sys) => {
            let config = sys.to_config()?;
            format!(
                "system: {} cells, {} ligand(s), {} expression rule(s)",
                config.topology.n(),
                config.ligands.len(),
                config.expression_rules.len()
            )
        }
        AnyFile::Graph(graph) => {
            let topology = graph.to_topology()?;
            format!(
                "graph: {} vertices, {} edges, {}",
                topology.n(),
                topology.edge_count(),
                if topology.is_connected() {
                    "connected"
                } else {
                    "disconnected"
                }
            )
        }
        AnyFile::Cm(file) => {
            let machine = file.to_machine()?;
            let wf = well_formed(&machine)?;
            let m = wf.machine();
            format!(
                "cm: {} counter(s), {} state(s), {} transition(s)",
                m.counters.len(),
                m.states.len(),
                m.transitions.len()
            )
        }
        AnyFile::Experiment(file) => {
            validate_spec(&file.spec)?;
            format!("experiment: {}", spec_name(&file.spec))
        }
    };
    println!("valid {description}");
    Ok(())
}

fn spec_name(spec: &ExperimentSpec) -> &'static str {
    match spec {
        ExperimentSpec::LeaderElection(_) => "leader-election",
        ExperimentSpec::Mis(_) => "mis",
        ExperimentSpec::MisStabilize(_) => "mis-stabilize",
        ExperimentSpec::Threshold(_) => "threshold",
        ExperimentSpec::Majority(_) => "majority",
    }
}

fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    match spec {
        ExperimentSpec::LeaderElection(s) => ensure!(s.trials >= 1, "trials must be at least 1"),
        ExperimentSpec::Mis(s) => ensure!(s.instances >= 1, "instances must be at least 1"),
        ExperimentSpec::MisStabilize(s) => {
            ensure!(s.instances >= 1, "instances must be at least 1");
            ensure!(s.window >= 1, "window must be at least 1");
        }
        ExperimentSpec::Threshold(s) => ensure!(s.trials >= 1, "trials must be at least 1"),
        ExperimentSpec::Majority(s) => ensure!(s.trials >= 1, "trials must be at least 1"),
    }
    Ok(())
}

//! Command-line front end for the coexistence simulator.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coexist::experiments::{
    run_experiment, trace_table, write_trace_jsonl, Experiment, ExperimentError, ExperimentOptions, Table,
};
use coexist::foraging::ChannelAssignment;
use coexist::mediator::{Mediator, MediatorServer};
use coexist::scenario::{allocation_stage, load_scenario, run_pipeline, PipelineError, Scenario, ScenarioError};

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "coexist", version, about = "Mediated spectrum sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run share allocation and print the equilibrium.
    Allocate {
        #[arg(long)]
        config: PathBuf,
        /// Write the round-by-round trace here (`.jsonl` for JSON lines, CSV otherwise).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run allocation and channel selection and print the assignment.
    Select {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the whole flow and write every artifact into a directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce one of the reference experiments.
    Experiment {
        /// fig2, fig3, fig4, fig5 or fig6.
        name: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mediator service.
    Mediator {
        #[command(subcommand)]
        command: MediatorCommand,
    },
}

#[derive(Subcommand)]
enum MediatorCommand {
    /// Serve the newline-delimited JSON protocol until killed.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long, default_value_t = 20)]
        channels: usize,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, err: io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(err: ScenarioError) -> Self {
        let code = match err {
            ScenarioError::Io { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(err: PipelineError) -> Self {
        let code = match err {
            PipelineError::NotConverged { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: format!("{} stage failed: {err}", err.stage()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::Scenario(e) => e.into(),
            ExperimentError::Pipeline(e) => e.into(),
            ExperimentError::Io { .. } => Failure {
                code: EXIT_IO,
                message: err.to_string(),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Allocate { config, trace } => allocate(&config, trace.as_deref()),
        Command::Select { config } => select(&config),
        Command::Pipeline { config, out } => pipeline(&config, &out),
        Command::Experiment { name, runs, seed, out } => {
            let experiment: Experiment = name.parse().map_err(Failure::config)?;
            for path in run_experiment(experiment, ExperimentOptions { runs, seed }, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Mediator {
            command: MediatorCommand::Serve { listen, channels },
        } => serve(&listen, channels),
    }
}

fn fmt_values(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
}

fn allocate(config: &Path, trace_path: Option<&Path>) -> Result<(), Failure> {
    let scenario = load_scenario(config)?;
    let stage = allocation_stage(&scenario)?;
    if let Some(path) = trace_path {
        let metadata = scenario.metadata();
        let jsonl = path.extension().is_some_and(|e| e == "jsonl");
        write_file(path, |out| {
            if jsonl {
                write_trace_jsonl(&stage.trace, &metadata, out)
            } else {
                trace_table(&stage.trace, metadata).write_csv(out)
            }
        })?;
    }
    let report = &stage.report;
    println!("converged: {}", report.converged);
    println!("rounds: {}", report.rounds);
    println!("requirements: {:?}", stage.requirements);
    println!("raw_totals: {}", fmt_values(&report.raw_totals));
    println!("normalized_totals: {}", fmt_values(&report.normalized_totals));
    if !report.converged {
        return Err(PipelineError::NotConverged { rounds: report.rounds }.into());
    }
    Ok(())
}

fn print_assignment(assignment: &ChannelAssignment) {
    for (id, channels) in assignment.networks.iter().zip(&assignment.channels) {
        let list: Vec<String> = channels.iter().map(usize::to_string).collect();
        println!("{id}: {}", list.join(" "));
    }
}

fn select(config: &Path) -> Result<(), Failure> {
    let scenario = load_scenario(config)?;
    let outcome = run_pipeline(&scenario)?;
    println!("budgets: {:?}", outcome.budgets);
    print_assignment(&outcome.assignment);
    println!("system_fitness: {}", outcome.metrics.system_fitness);
    println!("collision: {}", outcome.metrics.collision);
    println!("ess_holds: {}", outcome.metrics.ess_holds);
    Ok(())
}

fn pipeline(config: &Path, out: &Path) -> Result<(), Failure> {
    let scenario = load_scenario(config)?;
    let outcome = run_pipeline(&scenario)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let metadata = scenario.metadata();

    let trace_csv = out.join("trace.csv");
    write_file(&trace_csv, |w| trace_table(&outcome.trace, metadata.clone()).write_csv(w))?;
    let trace_jsonl = out.join("trace.jsonl");
    write_file(&trace_jsonl, |w| write_trace_jsonl(&outcome.trace, &metadata, w))?;

    let assignment = assignment_table(&scenario, &outcome.assignment, &outcome.budgets, metadata);
    let assignment_csv = out.join("assignment.csv");
    write_file(&assignment_csv, |w| assignment.write_csv(w))?;

    let summary = serde_json::json!({
        "scenario_hash": scenario.hash(),
        "requirements": outcome.requirements,
        "converged": outcome.report.converged,
        "rounds": outcome.report.rounds,
        "raw_totals": outcome.report.raw_totals,
        "normalized_totals": outcome.report.normalized_totals,
        "budgets": outcome.budgets,
        "metrics": outcome.metrics,
    });
    let summary_path = out.join("summary.json");
    write_file(&summary_path, |w| writeln!(w, "{summary:#}"))?;

    let log_path = out.join("mediator_log.jsonl");
    write_file(&log_path, |w| {
        for entry in &outcome.request_log {
            writeln!(w, "{}", entry.request.to_line())?;
            writeln!(w, "{}", entry.response.to_line())?;
        }
        Ok(())
    })?;

    for path in [trace_csv, trace_jsonl, assignment_csv, summary_path, log_path] {
        println!("{}", path.display());
    }
    Ok(())
}

fn assignment_table(
    scenario: &Scenario,
    assignment: &ChannelAssignment,
    budgets: &[usize],
    metadata: Vec<(String, String)>,
) -> Table {
    let strategies = scenario
        .strategy
        .assign(scenario.networks.len(), scenario.hybrid_membership);
    let rows = assignment
        .networks
        .iter()
        .zip(&assignment.channels)
        .enumerate()
        .map(|(i, (id, channels))| {
            let list: Vec<String> = channels.iter().map(usize::to_string).collect();
            vec![
                id.to_string(),
                format!("{:?}", strategies.strategies[i]),
                budgets[i].to_string(),
                list.join(" "),
            ]
        })
        .collect();
    Table {
        metadata,
        header: ["network", "strategy", "budget", "channels"].map(String::from).to_vec(),
        rows,
    }
}

fn serve(listen: &str, channels: usize) -> Result<(), Failure> {
    if channels == 0 {
        return Err(Failure::config("--channels must be at least 1"));
    }
    let server = MediatorServer::bind(listen, Mediator::new(channels)).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot listen on {listen}: {e}"),
    })?;
    let addr = server.local_addr().map_err(|e| Failure {
        code: EXIT_IO,
        message: e.to_string(),
    })?;
    eprintln!("mediator listening on {addr} with {channels} channels");
    server.run().map_err(|e| Failure {
        code: EXIT_IO,
        message: e.to_string(),
    })
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    let mut out = BufWriter::new(file);
    write(&mut out).and_then(|_| out.flush()).map_err(|e| Failure::io(path, e))
}

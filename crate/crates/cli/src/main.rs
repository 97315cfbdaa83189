//! `ubrsim`: runs scenarios and sweeps, renders tables, decodes traces.
//!
//! Exit status: 0 on success, 1 on I/O or usage problems, 2 when a
//! configuration or sweep file fails to parse or validate, 3 when a run
//! violates a simulator invariant, 4 when `--seedless-check` finds two
//! executions that differ.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ubrsim::report::{self, ColumnAxis, CsvRow, Metric, TableFormat, TableSpec};
use ubrsim::scenario::{Preset, ScenarioConfig, SweepSpec};
use ubrsim::sim::{run_batch, run_scenario, RunOutput, TraceSinks};
use ubrsim::switch::PolicyKind;
use ubrsim::tcp::CcVariant;
use ubrsim::trace::{dump_csv, Sink, StreamSummary};
use ubrsim::{ConfigError, RunError};

#[derive(Parser)]
#[command(
    name = "ubrsim",
    version,
    about = "Cell-level simulator of TCP over ATM UBR switches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run(RunArgs),
    /// Run every member of a sweep file.
    Sweep(SweepArgs),
    /// Arrange result CSVs into a table.
    Tabulate(TabulateArgs),
    /// Convert a binary trace file to CSV.
    TraceDump(TraceDumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Run a second time without trace files and compare the results.
    #[arg(long)]
    seedless_check: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file: a scenario file whose values may be comma-separated lists.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    seedless_check: bool,
}

#[derive(Args)]
struct TabulateArgs {
    /// Result CSV files.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Column axis: policy or variant.
    #[arg(long, default_value = "policy")]
    columns: ColumnAxis,
    /// efficiency, fairness or max_queue.
    #[arg(long, default_value = "efficiency")]
    metric: Metric,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    variant: Option<CcVariant>,
    /// text (tab-separated) or csv.
    #[arg(long, default_value = "text")]
    format: TableFormat,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceDumpArgs {
    /// Binary trace file.
    trace: PathBuf,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::new(1, format!("{e:#}"))
    }
}

fn run_error(context: &str, e: &RunError) -> Failure {
    let code = match e {
        RunError::Config(_) => 2,
        RunError::Sim(_) => 3,
    };
    Failure::new(code, format!("{context}: {e}"))
}

fn config_error(path: &Path, e: &ConfigError) -> Failure {
    Failure::new(2, format!("{}: {e}", path.display()))
}

const RESULTS: &str = "results.csv";
const EFFECTIVE_CONFIG: &str = "config.txt";

/// Opens a trace file in `dir` for each stream enabled in `cfg`.
fn file_sinks(cfg: &ScenarioConfig, dir: &Path) -> Result<TraceSinks> {
    TraceSinks::for_config(&cfg.trace, true, |schema| {
        let file = File::create(dir.join(schema.file_name()))?;
        Ok(Sink::Writer(Box::new(BufWriter::new(file))))
    })
    .with_context(|| format!("creating trace files in {}", dir.display()))
}

fn write_results(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    report::write_csv(BufWriter::new(file), rows).with_context(|| format!("writing {}", path.display()))
}

/// Comparable summary of one execution.
fn fingerprint(cfg: &ScenarioConfig, out: &RunOutput) -> (CsvRow, Vec<(u64, Option<String>)>) {
    let digests = out
        .traces
        .iter()
        .map(|t: &StreamSummary| (t.records, t.digest_hex()))
        .collect();
    (CsvRow::new(cfg, &out.report), digests)
}

fn read_config(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(1, format!("reading {}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let text = read_config(&args.config)?;
    let cfg: ScenarioConfig = text.parse().map_err(|e| config_error(&args.config, &e))?;
    cfg.validate().map_err(|e| config_error(&args.config, &e))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join(EFFECTIVE_CONFIG), cfg.to_config_string()).context("writing effective config")?;

    let out = run_scenario(&cfg, file_sinks(&cfg, &args.out)?).map_err(|e| run_error(&cfg.scenario_id(), &e))?;
    let row = CsvRow::new(&cfg, &out.report);
    write_results(&args.out.join(RESULTS), std::slice::from_ref(&row))?;
    println!(
        "{}: efficiency {} fairness {} max_queue {} cells",
        row.scenario_id, row.efficiency, row.fairness, row.max_queue_cells
    );
    if args.seedless_check {
        let again =
            run_scenario(&cfg, TraceSinks::hashed(&cfg.trace)).map_err(|e| run_error(&cfg.scenario_id(), &e))?;
        if fingerprint(&cfg, &out) != fingerprint(&cfg, &again) {
            return Err(Failure::new(
                4,
                format!("{}: second execution differs from the first", row.scenario_id),
            ));
        }
        println!("{}: second execution identical", row.scenario_id);
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let text = read_config(&args.sweep)?;
    let spec = SweepSpec::parse(&text).map_err(|e| config_error(&args.sweep, &e))?;
    let configs = spec.expand().map_err(|e| config_error(&args.sweep, &e))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let dirs: Vec<PathBuf> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| args.out.join(format!("{i:03}-{}", c.scenario_id())))
        .collect();

    let results = run_batch(&configs, args.parallel, |i, cfg| -> Result<RunOutput, Failure> {
        let dir = &dirs[i];
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(EFFECTIVE_CONFIG), cfg.to_config_string()).context("writing effective config")?;
        let id = format!("sweep member {i} ({})", cfg.scenario_id());
        let out = run_scenario(cfg, file_sinks(cfg, dir)?).map_err(|e| run_error(&id, &e))?;
        write_results(&dir.join(RESULTS), &[CsvRow::new(cfg, &out.report)])?;
        Ok(out)
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cfg, result) in configs.iter().zip(&results) {
        match result {
            Ok(out) => rows.push(CsvRow::new(cfg, &out.report)),
            Err(f) => failures.push(f),
        }
    }
    write_results(&args.out.join(RESULTS), &rows)?;
    println!("{} of {} sweep members completed", rows.len(), configs.len());

    if args.seedless_check && failures.is_empty() {
        let again = run_batch(&configs, args.parallel, |_, cfg| {
            run_scenario(cfg, TraceSinks::hashed(&cfg.trace))
        });
        let differing: Vec<String> = configs
            .iter()
            .zip(results.iter().zip(&again))
            .enumerate()
            .filter_map(|(i, (cfg, (first, second)))| match (first, second) {
                (Ok(a), Ok(b)) if fingerprint(cfg, a) == fingerprint(cfg, b) => None,
                _ => Some(format!("{i} ({})", cfg.scenario_id())),
            })
            .collect();
        if !differing.is_empty() {
            return Err(Failure::new(
                4,
                format!("second execution differs for sweep members {}", differing.join(", ")),
            ));
        }
        println!("second execution identical for all members");
    }

    if failures.is_empty() {
        return Ok(());
    }
    let code = failures.iter().map(|f| f.code).max().unwrap_or(1);
    let listed: Vec<&str> = failures.iter().map(|f| f.message.as_str()).collect();
    Err(Failure::new(
        code,
        format!("{} sweep member(s) failed:\n  {}", failures.len(), listed.join("\n  ")),
    ))
}

fn cmd_tabulate(args: TabulateArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in &args.csv {
        rows.extend(report::read_csv_file(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let spec = TableSpec {
        columns: args.columns,
        metric: args.metric,
        preset: args.preset,
        policy: args.policy,
        variant: args.variant,
        format: args.format,
    };
    let table = report::tabulate(&rows, &spec).map_err(|e| Failure::new(1, e.to_string()))?;
    match args.out {
        Some(path) => fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(table.as_bytes()).context("writing table")?,
    }
    Ok(())
}

fn cmd_trace_dump(args: TraceDumpArgs) -> Result<(), Failure> {
    let input = File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let input = BufReader::new(input);
    let result = match &args.out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            dump_csv(input, BufWriter::new(file))
        }
        None => dump_csv(input, BufWriter::new(io::stdout().lock())),
    };
    result.map_err(|e| Failure::new(1, format!("{}: {e}", args.trace.display())))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Tabulate(a) => cmd_tabulate(a),
        Command::TraceDump(a) => cmd_trace_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

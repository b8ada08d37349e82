use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stcm_core::sim::growth::{CONTRACT_PRESET_BYTES, GIB, LEGACY_BLOCK_BYTES, REFERENCE_TRANSACTIONS, TIB};
use stcm_core::sim::{growth_scenario, MetricsReport, Scenario, SimError, Simulation};

/// Run consensus scenarios and the storage-growth experiment
#[derive(Parser, Debug)]
#[command(name = "stcm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file and write the metrics CSV
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Also write the event trace, one line per event
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Storage growth of full-size blocks against a legacy block model
    Growth {
        #[arg(long, default_value_t = 300_000)]
        transactions: u64,
        #[arg(long, default_value_t = 3)]
        psl_size: usize,
        #[arg(long, default_value_t = 1)]
        psl_count: usize,
        /// Bytes per legacy block; also accepts the presets 4mib and 22kb
        #[arg(long, default_value = "4mib", value_parser = parse_block_bytes)]
        legacy_block_bytes: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "growth.csv")]
        out: PathBuf,
    },
}

fn parse_block_bytes(s: &str) -> Result<u64, String> {
    match s.to_ascii_lowercase().as_str() {
        "4mib" => Ok(LEGACY_BLOCK_BYTES),
        "22kb" => Ok(CONTRACT_PRESET_BYTES),
        other => other.parse().map_err(|_| format!("expected a byte count, 4mib or 22kb, got {s}")),
    }
}

enum Failure {
    Io(String),
    Sim(SimError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Sim(SimError::InvalidScenario(_)) => 2,
            Failure::Sim(SimError::InvariantBreach { .. }) => 3,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Sim(e)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path, trace: Option<&Path>) -> Result<(), Failure> {
    let text =
        fs::read_to_string(scenario).map_err(|e| Failure::Io(format!("cannot read {}: {e}", scenario.display())))?;
    let mut s = Scenario::from_json(&text)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let mut sim = Simulation::new(s)?;
    if trace.is_some() {
        sim = sim.with_trace();
    }
    let outcome = sim.run().map(|_| ());
    // the trace is most useful when the run broke
    if let (Some(path), Some(lines)) = (trace, sim.trace_lines()) {
        let mut text = lines.join("\n");
        text.push('\n');
        write(path, &text)?;
    }
    outcome?;
    write(out, &sim.report().to_csv())?;
    print!("{}", sim.report().summary());
    println!("metrics written to {}", out.display());
    Ok(())
}

fn growth(n: u64, psl_size: usize, psl_count: usize, block_bytes: u64, seed: u64, out: &Path) -> Result<(), Failure> {
    if n == 0 {
        return Err(SimError::InvalidScenario("--transactions must be at least 1".into()).into());
    }
    if psl_size < 2 {
        return Err(SimError::InvalidScenario("--psl-size must be at least 2".into()).into());
    }
    let mut sim = Simulation::new(growth_scenario(n, psl_size, psl_count, seed))?;
    sim.set_legacy_block_bytes(block_bytes);
    sim.run()?;
    let r = sim.report();
    write(out, &r.to_csv())?;
    print!("{}", r.summary());
    print_extrapolation(r);
    println!("metrics written to {}", out.display());
    Ok(())
}

/// Scales the measured per-block size to the reference transaction count.
fn print_extrapolation(r: &MetricsReport) {
    if r.committed_blocks == 0 {
        return;
    }
    let per_block = r.unique_content_bytes as f64 / r.committed_blocks as f64;
    let n = REFERENCE_TRANSACTIONS as f64;
    let unique = per_block * n / GIB;
    let legacy = r.legacy_block_bytes as f64 * n / TIB;
    println!("at {REFERENCE_TRANSACTIONS} transactions:");
    println!("  unique content   {unique:.2} GiB ({per_block:.0} B/block)");
    println!("  legacy platform  {legacy:.2} TiB ({} B/block)", r.legacy_block_bytes);
    println!("  ratio            {:.0}x", r.legacy_block_bytes as f64 / per_block);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out, trace } => run(scenario, *seed, out, trace.as_deref()),
        Command::Growth { transactions, psl_size, psl_count, legacy_block_bytes, seed, out } => {
            growth(*transactions, *psl_size, *psl_count, *legacy_block_bytes, *seed, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Io(msg) => eprintln!("error: {msg}"),
                Failure::Sim(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

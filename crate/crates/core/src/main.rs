use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use radiobc::bits::Bits;
use radiobc::engine::Trace;
use radiobc::graph::parse_graph;
use radiobc::gst::{validate_gst, GstLabels};
use radiobc::harness::{potential_trace, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "radiobc", version, about = "Radio-network broadcast simulator")]
struct Cli {
    /// First seed of the sweep (overrides the config).
    #[arg(long, global = true, env = "RADIOBC_SEED")]
    seed: Option<u64>,
    /// Constant overrides, e.g. `decay_phases=6,ring_width=40`.
    #[arg(long, global = true)]
    constants: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep; prints the CSV unless the config names an output file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check GST labels against a graph.
    ValidateGst {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Print `t Φ(t)` for a target node over a recorded trace.
    DiagnosePotential {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        target: usize,
        /// GST labels with virtual distances that the trace ran on.
        #[arg(long)]
        labels: PathBuf,
        /// The L used by the schedule.
        #[arg(long, default_value_t = 4)]
        log_n: usize,
        /// Restrict to receptions non-orthogonal to this coefficient vector (0/1 string).
        #[arg(long)]
        mu: Option<String>,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_toml(&read(&config)?).map_err(|e| e.to_string())?;
            if let Some(s) = cli.seed {
                cfg.seeds.start = s;
            }
            if let Some(o) = &cli.constants {
                cfg.constants.apply_overrides(o).map_err(|e| e.to_string())?;
            }
            let result = run_experiment(&cfg).map_err(|e| e.to_string())?;
            if cfg.output.csv.is_none() {
                print!("{}", result.csv());
            }
            if cfg.output.summary.is_none() {
                eprint!("{}", result.summary.to_toml());
            }
            Ok(true)
        }
        Command::ValidateGst { graph, labels } => {
            let g = parse_graph(&read(&graph)?).map_err(|e| e.to_string())?;
            let labels = GstLabels::parse(&read(&labels)?).map_err(|e| e.to_string())?;
            if labels.len() != g.node_count() {
                return Err(format!("{} labels for {} nodes", labels.len(), g.node_count()));
            }
            let report = validate_gst(&g, &labels);
            for v in &report.violations {
                println!("{v}");
            }
            println!("{}", if report.ok() { "valid" } else { "invalid" });
            Ok(report.ok())
        }
        Command::DiagnosePotential { trace, target, labels, log_n, mu } => {
            let trace = Trace::parse(&read(&trace)?).map_err(|e| e.to_string())?;
            let labels = GstLabels::parse(&read(&labels)?).map_err(|e| e.to_string())?;
            let mu = match mu {
                Some(s) => Some(Bits::parse_bit_string(&s).ok_or("mu must be a 0/1 string")?),
                None => None,
            };
            let phi = potential_trace(&trace, &labels, target, mu.as_ref(), log_n, None).map_err(|e| e.to_string())?;
            println!("# t phi");
            for (t, p) in phi.iter().enumerate() {
                println!("{t} {p}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use foliation_blowup_cli::{builtins, list_examples, run_to_dir, Scenario};

#[derive(Parser)]
#[command(name = "foliation-blowup", version, about = "Blow-up fibers and groupoids of singular foliations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario.
    Run {
        /// Scenario JSON file.
        #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
        scenario: Option<PathBuf>,
        /// Name of a built-in scenario (see `examples`).
        #[arg(long)]
        builtin: Option<String>,
        /// Report directory; overrides the scenario's output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run probes in parallel.
        #[arg(long)]
        parallel: bool,
    },
    /// List the built-in scenarios.
    Examples,
}

fn init_logging() {
    let level = std::env::var("FB_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
}

fn load(scenario: Option<PathBuf>, builtin: Option<String>) -> Result<Scenario, String> {
    if let Some(name) = builtin {
        return builtins::find(&name)
            .map(|b| b.scenario())
            .ok_or_else(|| format!("unknown built-in scenario `{name}`; try `foliation-blowup examples`"));
    }
    let path = scenario.expect("clap requires a scenario or --builtin");
    let src = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let name = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
    Scenario::parse(&name, &src).map_err(|e| format!("{}:{}:{}: {}", path.display(), e.line, e.column, e.message))
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match cli.command {
        Command::Examples => {
            print!("{}", list_examples());
            ExitCode::SUCCESS
        }
        Command::Run {
            scenario,
            builtin,
            out,
            seed,
            parallel,
        } => {
            let mut scenario = match load(scenario, builtin) {
                Ok(s) => s,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(1);
                }
            };
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            match run_to_dir(&scenario, out.as_deref(), parallel) {
                Ok(outcome) => {
                    for r in &outcome.reports {
                        println!("{:>3} {:<20} {:?}", r.index, r.op, r.status);
                    }
                    println!(
                        "{}: {}/{} probes passed",
                        outcome.summary.scenario, outcome.summary.passed, outcome.summary.probes
                    );
                    ExitCode::from(outcome.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: cannot write reports: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

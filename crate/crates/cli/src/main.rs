use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use powermarket_cli::builtins::list_scenarios;
use powermarket_cli::{output_dir, resolve_scenario, run_scenario, CliError};

#[derive(Parser)]
#[command(name = "market-sim", version, about = "Run power market scenarios and write CSV results")]
struct Cli {
    /// Directory searched for user scenario files.
    #[arg(long, global = true, env = "MARKET_SIM_CONFIG_DIR", default_value = "scenarios")]
    config_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        scenario: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; results go to `<out>/<scenario name>`.
        #[arg(long, env = "MARKET_SIM_OUT")]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// List built-in and user scenarios.
    List {
        /// Names only, one per line.
        #[arg(long)]
        plain: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::List { plain } => {
            for l in list_scenarios(Some(&cli.config_dir))? {
                if plain {
                    println!("{}", l.name);
                } else {
                    println!("{:<14} {:<10} {}", l.name, l.source, l.description);
                }
            }
            Ok(())
        }
        Command::Run { scenario, seed, out, threads, format: Format::Csv } => {
            if let Some(n) = threads {
                if n == 0 {
                    return Err(CliError::Invalid("--threads must be >= 1".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Invalid(format!("cannot start thread pool: {e}")))?;
            }
            let mut sc = resolve_scenario(&scenario, &cli.config_dir)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let dir = output_dir(out.as_deref(), &sc, &PathBuf::from("out"));
            let artifacts = run_scenario(&sc)?;
            for path in artifacts.write_to(&dir)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use airfed_core::cli::{self, Overrides};
use airfed_core::fedlearn::AggregatorChoice;
use airfed_core::scheduler::SchedulerChoice;

#[derive(Parser)]
#[command(name = "airfed", about = "Secure and private over-the-air federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Scheduler: full|policy1|spa|esm|closed-form|random
    #[arg(long)]
    scheduler: Option<String>,
    /// Aggregator: cwpp|aligned|ideal
    #[arg(long)]
    aggregator: Option<String>,
    /// Replicate count (overrides the config)
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write CSV artifacts
    Run(CommonArgs),
    /// Solve sampled scheduling instances with every applicable solver
    CompareSolvers(CommonArgs),
    /// Run the experiment and check the convergence bound against it
    ValidateBound(CommonArgs),
    /// Print Xi over a uniform grid
    XiTable {
        /// Largest argument in the table
        #[arg(long, default_value_t = 5.0)]
        t_max: f64,
        /// Grid spacing
        #[arg(long, default_value_t = 0.25)]
        t_step: f64,
        /// Write the table to a file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn overrides_of(args: &CommonArgs) -> Result<Overrides, airfed_core::Error> {
    Ok(Overrides {
        seed: args.seed,
        scheduler: args
            .scheduler
            .as_deref()
            .map(SchedulerChoice::from_str)
            .transpose()?,
        aggregator: args
            .aggregator
            .as_deref()
            .map(AggregatorChoice::from_str)
            .transpose()?,
        replicates: args.replicates,
        out: args.out.clone(),
    })
}

fn run(command: Command) -> Result<(), airfed_core::Error> {
    match command {
        Command::Run(args) => {
            let cfg = cli::load_config(&args.config, &overrides_of(&args)?)?;
            let files = cli::run_experiment(&cfg)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::CompareSolvers(args) => {
            let cfg = cli::load_config(&args.config, &overrides_of(&args)?)?;
            let path = cli::compare_solvers(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::ValidateBound(args) => {
            let cfg = cli::load_config(&args.config, &overrides_of(&args)?)?;
            let report = cli::validate_bound_cmd(&cfg)?;
            let worst = report
                .rows
                .iter()
                .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap())
                .expect("report has rows");
            if report.low_replicates {
                eprintln!("warning: single replicate; comparison is high variance");
            }
            println!(
                "bound holds: {} (worst margin {} at round {})",
                report.holds, worst.margin, worst.round
            );
            if !report.holds {
                return Err(airfed_core::Error::ConfigParse(
                    "bound violated; see bound_report.csv".into(),
                ));
            }
        }
        Command::XiTable { t_max, t_step, out } => {
            let table = cli::xi_table(t_max, t_step)?;
            match out {
                Some(path) => std::fs::write(&path, table).map_err(|e| {
                    airfed_core::Error::ConfigParse(format!("cannot write {}: {e}", path.display()))
                })?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

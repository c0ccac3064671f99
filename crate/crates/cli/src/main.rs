use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use eventlens_cli::{
    cmd_attribute, cmd_fidelity, cmd_gen, cmd_report, cmd_train, AttributeOptions, CliError, FidelityOptions, RunConfig,
};

#[derive(Parser)]
#[command(name = "eventlens", version, about = "Event prediction and attribution on synthetic MOBA telemetry")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate matches and write train/validation/test splits.
    Gen,
    /// Train every configured architecture at every horizon.
    Train,
    /// Write top-k attribution reports for test instances.
    Attribute {
        /// Test-window index; repeatable.
        #[arg(long = "instance")]
        instances: Vec<usize>,
        #[arg(long)]
        horizon: Option<u32>,
        /// What to print on stdout; both forms are always written to disk.
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Score attribution methods by fidelity over the k grid.
    Fidelity {
        #[arg(long)]
        horizon: Option<u32>,
    },
    /// Aggregate existing outputs into summary tables.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    log::info!("config digest {}", cfg.digest());
    match cli.command {
        Command::Gen => {
            let s = cmd_gen(&cfg, cli.force)?;
            for split in &s.splits {
                println!("{}: {} games", split.name, split.games);
            }
        }
        Command::Train => {
            let s = cmd_train(&cfg, cli.force)?;
            print!("{}", eventlens_cli::train::render_text(&s));
        }
        Command::Attribute {
            instances,
            horizon,
            format,
        } => {
            let opts = AttributeOptions {
                instances: (!instances.is_empty()).then_some(instances),
                horizon,
            };
            for out in cmd_attribute(&cfg, &opts, cli.force)? {
                match format {
                    Format::Text => println!("{}", out.text()),
                    Format::Json => println!("{}", serde_json::to_string(&out)?),
                }
            }
        }
        Command::Fidelity { horizon } => {
            let s = cmd_fidelity(&cfg, &FidelityOptions { horizon }, cli.force)?;
            print!("{}", eventlens_cli::fidelity::render_text(&s));
        }
        Command::Report => {
            let s = cmd_report(&cfg, cli.force)?;
            print!("{}", eventlens_cli::report::render_text(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CliError>() {
                Some(CliError::DropRate { .. }) => ExitCode::from(3),
                Some(CliError::Exists(_)) => ExitCode::from(4),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reflector_cli::pipeline::{EXIT_CONFIG, EXIT_OTHER};
use reflector_cli::{exit_code_for, run, validate_config, RunOptions};

#[derive(Parser)]
#[command(name = "reflector", version, about = "Design far-field reflectors by optimal transport on the sphere")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Neither read nor write the stencil cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a JSON config.
    Run { config: PathBuf },
    /// Validate a config without running it.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("could not size the worker pool: {e}");
            return ExitCode::from(EXIT_OTHER as u8);
        }
    }
    let path = match &cli.command {
        Command::Run { config } | Command::Check { config } => config,
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            log::error!("{}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let config = match validate_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in errors {
                log::error!("{}: {e}", path.display());
            }
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Command::Check { .. } = cli.command {
        println!("{}: ok", path.display());
        return ExitCode::SUCCESS;
    }
    let opts = RunOptions {
        use_cache: !cli.no_cache,
        cache_dir: None,
    };
    match run(&config, &opts) {
        Ok(report) => {
            println!("{}", config.output.join("report.json").display());
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}

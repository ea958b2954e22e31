use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rollfolio::config::{validate_config, Overrides, RunConfig};
use rollfolio::pipeline::{run_pipeline, write_outputs, PipelineError};

/// Rolling-window portfolio backtests over a universe with one shortable asset.
#[derive(Parser)]
#[command(name = "rollfolio", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the backtests and write all output files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated strategy ids, e.g. `EW,SR-GM`.
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        /// with | without | both
        #[arg(long)]
        universe: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config file and print the resolved values.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

fn read_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, PipelineError> {
    let doc = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| PipelineError::Config(vec![rollfolio::config::ConfigIssue::new("--config", format!("{}: {e}", p.display()))]))?,
        None => String::new(),
    };
    validate_config(&doc, overrides).map_err(PipelineError::Config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Version => {
            println!("rollfolio {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Validate { config } => read_config(Some(&config), &Overrides::default()).map(|cfg| print!("{}", cfg.to_toml())),
        Command::Run {
            config,
            data,
            strategies,
            from,
            to,
            universe,
            out,
            seed,
        } => {
            let overrides = Overrides {
                data_path: data,
                strategies,
                date_from: from,
                date_to: to,
                universe_mode: universe,
                output_dir: out,
                seed,
            };
            read_config(config.as_deref(), &overrides).and_then(|cfg| {
                let summary = run_pipeline(&cfg)?;
                let written = write_outputs(&summary, &cfg.output_dir)?;
                println!("wrote {} files to {}", written.len(), cfg.output_dir.display());
                Ok(())
            })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

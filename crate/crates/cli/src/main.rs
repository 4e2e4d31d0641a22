use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use signalmine_cli::{run, CliError, Command, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "signalmine", version, about = "Drug-condition signal detection pipeline")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Pipeline configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `section.key=value` overrides, applied after the file.
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.kind().to_string());
            eprintln!("{}", err.line());
            let _ = e.print();
            return ExitCode::from(err.class.exit_code() as u8);
        }
    };
    let result = PipelineConfig::load(args.config.as_deref(), &args.overrides)
        .and_then(|config| run(args.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}

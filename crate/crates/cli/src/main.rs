use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use shallow_cert_cli::{run, Command, Invocation};

/// Exact-risk, training, flow and verification experiments for shallow ReLU networks.
#[derive(Debug, Parser)]
#[command(name = "shallow-cert", version)]
struct Args {
    command: Command,
    /// JSON configuration file. Optional for `verify`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; overrides the config's `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let inv = Invocation {
        command: args.command,
        config: args.config,
        output: args.output,
        seed: args.seed,
    };
    let code = match run(&inv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock()) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("shallow-cert: {e}");
            e.status().code()
        }
    };
    ExitCode::from(code as u8)
}

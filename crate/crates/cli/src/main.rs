mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use crate::cli::Cli;
use crate::config::{load_section, merge, Section};

/// Exit status when outputs were written but some grid point did not converge.
const EXIT_INCOMPLETE: u8 = 2;

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let (cmd, flags) = cli.command.split();
    let flags = flags.clone().normalised();
    let base = match &flags.config {
        Some(path) => load_section(path, cmd)?,
        None => Section::default(),
    };
    let section = merge(base, &flags, cmd)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = section.threads {
        anyhow::ensure!(t >= 1, "--threads must be at least 1");
        pool = pool.num_threads(t);
    }
    pool.build_global()?;
    Ok(commands::run(cmd, &section)?.complete)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, flags) = cli.command.split();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("dccox {}: some grid points did not converge (see diagnostics)", cmd.name());
            ExitCode::from(EXIT_INCOMPLETE)
        }
        Err(e) => {
            if flags.error_json {
                let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
                let body = serde_json::json!({ "command": cmd.name(), "error": e.to_string(), "causes": chain });
                eprintln!("{body}");
            } else {
                eprintln!("dccox {}: {e:#}", cmd.name());
            }
            ExitCode::FAILURE
        }
    }
}

use std::process::ExitCode;

use clap::Parser;
use coevo_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    coevo_cli::exit_code(coevo_cli::run(&cli, &mut out))
}

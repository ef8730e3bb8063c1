use std::process::ExitCode;

use clap::Parser;
use obsgrass_cli::app::{main_with, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(main_with(&cli) as u8)
}

use std::process::ExitCode;

use clap::Parser;
use cubicreg_cli::{run, Cli};

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors by itself
    let cli = Cli::parse();
    ExitCode::from(run(cli))
}

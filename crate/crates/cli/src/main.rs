use std::process::ExitCode;

use clap::Parser;
use tuftwin_cli::{Cli, EXIT_FAILURE, EXIT_OK};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors.
            return ExitCode::from(if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK });
        }
    };
    ExitCode::from(tuftwin_cli::run(cli))
}

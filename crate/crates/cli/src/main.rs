use std::process::ExitCode;

use clap::Parser;

use fhe_tree_cli::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fhe-tree: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

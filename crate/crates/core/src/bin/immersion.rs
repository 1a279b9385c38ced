use clap::Parser;

use immersion::cli::{run_command, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run_command(&cli));
}

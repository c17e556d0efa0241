use clap::Parser;
use urllc_risk::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli, std::env::vars()));
}

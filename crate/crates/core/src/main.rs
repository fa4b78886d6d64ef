use clap::Parser;
use lifelong_tamp::cli::{execute, Cli};

fn main() {
    std::process::exit(execute(&Cli::parse()));
}

use clap::Parser;
use polyreg::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

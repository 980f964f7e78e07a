use clap::Parser;
use ga_radiance::cli;

fn main() {
    let args = cli::Cli::parse();
    std::process::exit(cli::run(args));
}

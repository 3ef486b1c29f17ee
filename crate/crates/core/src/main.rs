use clap::Parser;

fn main() {
    std::process::exit(nucseg::cli::run(nucseg::cli::Cli::parse()));
}

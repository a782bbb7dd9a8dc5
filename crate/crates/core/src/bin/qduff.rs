use clap::Parser;

fn main() {
    std::process::exit(qduff::cli::run(qduff::cli::Cli::parse()));
}
